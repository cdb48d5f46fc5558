"""
Events, voxel clouds and the two PSNR flavours
==============================================

A translating disc fires POS events on its leading edge and NEG events on its
trailing edge. We voxelize the stream, look at what deduplication throws away,
code the cloud losslessly and then score a deliberately damaged copy.
"""

import numpy as np

from evject.baseline import lossless_decode, lossless_encode
from evject.conversion import events_to_single_pc, single_pc_to_events
from evject.events import EventStream, ShapeClass, SyntheticConfig, generate_synthetic_sequence
from evject.metrics import metric_peak, psnr_d1, psnr_e2e, scaled_points

cfg = SyntheticConfig(width=32, height=32, duration=0.25, shape_class=ShapeClass.DISC,
                      velocity=(60.0, 20.0), event_rate=120.0, noise_rate=60.0, seed=4, size=12.0)
stream = generate_synthetic_sequence(cfg)
print(stream)
print("POS share: %.2f" % np.mean(stream.p > 0))

# %%
# Voxelization puts time on a 1/tsf grid and merges events that land in the
# same voxel.

tsf = 128
pc, stats = events_to_single_pc(stream, tsf)
print(pc, stats)
print("kept %d of %d events" % (len(pc), len(stream)))

# %%
# The lossless anchor codes the cloud exactly.

data = lossless_encode(pc)
assert lossless_decode(data) == pc
print("lossless: %d bytes, %.3f bits per original event" % (len(data), 8 * len(data) / len(stream)))

# %%
# Damage the voxelized stream: drop a third of the events and flip a few
# polarities, then compare both metrics. PSNR E2E matches each event only
# against events of the same polarity, so flips cost it more than D1.

vox = single_pc_to_events(pc)
rng = np.random.default_rng(0)
keep = rng.random(len(vox)) > 1 / 3
p = vox.p.copy()
p[rng.random(len(p)) < 0.1] *= -1
damaged = EventStream(vox.x[keep], vox.y[keep], vox.t[keep], p[keep], vox.width, vox.height, vox.duration)

e2e = psnr_e2e(vox, damaged)
peak = metric_peak(vox.width, vox.height, vox.duration)
d1 = psnr_d1(scaled_points(vox), scaled_points(damaged), peak)
print("peak %d: PSNR E2E %.2f dB, PSNR D1 %.2f dB" % (e2e.peak, e2e.psnr_db, d1))
