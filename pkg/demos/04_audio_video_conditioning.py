"""Audio alignment/injection and the additive video conditioning path."""

import numpy as np

from hcustom import AudioTrack, align_audio
from hcustom.audio_net import AudioInjectConfig, AudioInjector, inject_audio
from hcustom.nn import ParamStore
from hcustom.video_inject import inject_video

rng = np.random.default_rng(0)

# an audio clip with f'_a = 9 frames aligns to f = 3 latent frames (+1 identity)
audio = AudioTrack(rng.normal(size=(9, 4, 32)).astype(np.float32))
aligned = align_audio(audio, f=3)
print("audio [9,4,32] -> aligned", aligned.data.shape, "(front-padded with",
      (3 + 1) * 4 - 9, "zero frames)")

store = ParamStore()
inj = AudioInjector(store, rng, latent_channels=16, audio_width=32,
                    config=AudioInjectConfig(lambda_a=1.0, width=32, heads=2))
tokens = rng.normal(size=(4 * 64, 16)).astype(np.float32)  # 4 frames of 8x8 cells
out = inject_audio(tokens, aligned, inj, wh=64)
print("injection preserves shape:", out.shape == tokens.shape)

# per-frame isolation: changing frame 2's audio leaves other frames bit-identical
bumped = aligned.data.copy()
bumped[2] += 1.0
out2 = inject_audio(tokens, type(aligned)(bumped), inj, wh=64)
same = [bool((out.reshape(4, 64, 16)[g] == out2.reshape(4, 64, 16)[g]).all())
        for g in range(4)]
print("frames unchanged after editing frame 2's audio:", same)

# lambda = 0 switches audio off exactly
inj.config = AudioInjectConfig(lambda_a=0.0, width=32, heads=2)
print("lambda=0 is exact identity:",
      bool((inject_audio(tokens, aligned, inj, wh=64) == tokens).all()))

# additive video conditioning: no token growth, identity frames untouched
seq = rng.normal(size=((1 + 3) * 64, 16))
cond = rng.normal(size=(3 * 64, 16))
injected = inject_video(seq, cond, "add", n_identity_tokens=64)
print("token count unchanged:", injected.shape == seq.shape,
      "| identity block untouched:", bool((injected[:64] == seq[:64]).all()))
