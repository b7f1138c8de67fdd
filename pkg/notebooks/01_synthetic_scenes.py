# %% [markdown]
# # Synthetic parking scenes
# Render a handful of scenes, list their labelled slots, and write annotated
# copies next to this file under `out/`.

# %%
from collections import Counter
from pathlib import Path

from slotnet.cli import render_overlay
from slotnet.synth import SceneConfig, generate_scene, write_ppm

OUT = Path(__file__).resolve().parent / "out" if "__file__" in globals() else Path("out")
OUT.mkdir(parents=True, exist_ok=True)
cfg = SceneConfig(seed=3)

# %%
types = Counter()
for i in range(6):
    scene = generate_scene(cfg, i)
    print(f"scene {i}: {len(scene.slots)} slots")
    for s in scene.slots:
        types[s.slot_type.value] += 1
        print(f"  {s.slot_type.value:<13} {s.occupancy.value:<8} "
              f"j1=({s.j1.x:6.1f},{s.j1.y:6.1f}) j2=({s.j2.x:6.1f},{s.j2.y:6.1f})")
    write_ppm(OUT / f"scene_{i}.ppm", render_overlay(scene.image, scene.slots))
print(dict(types))

# %% [markdown]
# Overlay colours: green for perpendicular, red for parallel, blue for slanted.
