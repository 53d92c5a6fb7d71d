"""The two image-text templates and marker expansion."""

from hcustom import PromptSpec, Template, build_template, fuse, toy_encoder
from hcustom.synth_data import SpriteIdentity, render_identity_frame
from hcustom.latent_codec import PixelVideo

img = PixelVideo(render_identity_frame(SpriteIdentity(shape="circle", hue_bin=0), 64)[None])

embedded = PromptSpec("A man is playing guitar", [("man", img)], Template.image_embedded)
appended = PromptSpec("A man is playing guitar", [("man", img)], Template.image_appended)
print("embedded:", build_template(embedded))
print("appended:", build_template(appended))

encoder = toy_encoder(seed=0)
fused = fuse(appended, encoder)
counts = {}
for tag in fused.provenance:
    counts[tag] = counts.get(tag, 0) + 1
print("fused token counts:", counts)
print("total length:", len(fused), "embedding width:", fused.embeddings.shape[1])

two = PromptSpec("a circle and a square",
                 [("circle", img), ("square", img)], Template.image_appended)
fused2 = fuse(two, encoder)
print("two subjects ->", fused2.count("sep"), "separators,",
      fused2.count("image-1") + fused2.count("image-2"), "image tokens")
