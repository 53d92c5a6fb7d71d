"""The dataset-pipeline procedures over annotation records."""

import numpy as np

from hcustom.synth_data import (AnnotationRecord, BBox, augment_mask,
                                crop_with_coverage, filter_clips,
                                select_main_subject, standardize_resolution,
                                validate_bbox_size, validate_face_in_body)
from hcustom.latent_codec import PixelVideo

# main-subject selection: id 7 appears in 60 frames, id 2 in 30
frames = []
for i in range(100):
    frame = {}
    if i < 60:
        frame[7] = [0, 0, 10, 10]
    if i < 30:
        frame[2] = [20, 20, 30, 30]
    frames.append(frame)
record = AnnotationRecord("clip0", frames)
print("main subject:", select_main_subject(record))
print("49-frame track rejected:", select_main_subject(
    AnnotationRecord("clip1", [{0: [0, 0, 5, 5]} if i < 49 else {} for i in range(100)])))

# geometric validations
print("face half-inside body passes:",
      validate_face_in_body(BBox(0, 0, 10, 10), BBox(5, 0, 20, 10)))
print("box at exactly 0.3 of the frame passes:",
      validate_bbox_size(BBox(0, 0, 30, 30), 100, 100))

crop = crop_with_coverage([BBox(0, 0, 30, 30)], 90, 160, aspect="9:16")
print("9:16 crop anchored to a corner union box:", crop.to_list())

# mask augmentation
mask = np.zeros((7, 7), dtype=np.uint8)
mask[3, 3] = 1
print("dilated single pixel covers", augment_mask(mask, "dilate", 1).sum(), "pixels")

# score filtering: boundaries are inclusive on the keep side
records = [AnnotationRecord(f"c{i}", [], scores=s) for i, s in enumerate([
    {"koala": 0.05}, {"koala": 0.06}, {"sync": 3.0}, {"sync": 2.9}, {"iqa": 40.0}])]
kept = filter_clips(records)
print("kept clips:", [r.clip_id for r in kept])

video = PixelVideo(np.random.default_rng(0).random((2, 128, 256, 3), dtype=np.float32))
std = standardize_resolution(video, 64, "1:1")
print("128x256 standardized to:", std.data.shape)
