# %% [markdown]
# # Training a small detector end to end
# A deliberately short run on a tiny corpus. It finishes in a few minutes on
# one core; expect low scores. The full-size run lives in the acceptance tests.

# %%
import tempfile

from slotnet.diffnet.model import BackboneConfig, ModelConfig, SlotDetectorNet
from slotnet.evalx import LOOSE, TIGHT, evaluate, format_table
from slotnet.pipeline import detect
from slotnet.synth import SceneConfig, write_corpus
from slotnet.train import TRAIN_PRESETS, load_corpus, train, with_overrides

root = tempfile.mkdtemp(prefix="slotnet-demo-")
write_corpus(SceneConfig(seed=5), 120, root, workers=1)
train_set, test_set = load_corpus(root).split(20)

# %%
model = SlotDetectorNet(ModelConfig(BackboneConfig(stage_channels=(8, 16, 32, 48, 64)), hidden=32), seed=1)
cfg = with_overrides(TRAIN_PRESETS["desk"], epochs=6, alternate_epochs=4)
result = train(model, train_set, cfg, on_epoch=lambda r: print(r["epoch"], r["phase"],
                                                                round(r["train"]["loss_first"], 1),
                                                                round(r["train"]["loss_second"], 1)))

# %%
dets = detect(model, test_set.images, result.settings)
print(format_table([evaluate(dets, test_set.labels, c) for c in (LOOSE, TIGHT)]))
