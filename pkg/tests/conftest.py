import numpy as np

from objaff.datagen import Dataset, DatasetManifest, TrialRecord
from objaff.sim.shapes import TRAIN_FAMILIES, ActingObjectSpec
from objaff.train import PreparedCache


def toy_clouds(count, n, m, seed=0, margin=0.1):
    """Random scenes with one seed each, labelled by whether the seed sits high or low.

    Seeds are drawn from points with |z| > margin so the two classes are separated.
    """
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        scene = rng.uniform(-0.5, 0.5, size=(n, 3))
        obj = rng.normal(size=(m, 3)) * [0.05, 0.04, 0.06]
        label = i % 2
        pool = np.nonzero(scene[:, 2] > margin if label else scene[:, 2] < -margin)[0]
        out.append((scene, obj, int(rng.choice(pool)), label))
    return out


def toy_dataset(model, count=50, seed=0):
    """A :class:`Dataset` over synthetic clouds with its prepared inputs already cached."""
    items = toy_clouds(count, model.preset.n, model.preset.m, seed)
    records = [
        TrialRecord("placement", i, i, ActingObjectSpec(TRAIN_FAMILIES[i % 4], i), p, (0.0, 0.0, 0.0), y, "toy",
                    TRAIN_FAMILIES[i % 4])
        for i, (_, _, p, y) in enumerate(items)
    ]
    manifest = DatasetManifest("placement", model.preset.name, seed, list(TRAIN_FAMILIES), count // 2, 1)
    ds = Dataset(manifest, records)
    cache = PreparedCache(model, ds)
    normals = np.tile([0.0, 0.0, 1.0], (model.preset.n, 1))
    for i, (scene, obj, p, _) in enumerate(items):
        cache._items[i] = model.prepare(scene, obj, [p], normals)
    return ds, cache


# criterion number -> PASS/FAIL line, filled by the acceptance tests
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
