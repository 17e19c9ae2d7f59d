import time

import numpy as np
import pytest

from action_region.detector import MotionBoundaryDetector
from action_region.forest import ForestParams
from action_region.synthetic import SyntheticConfig, generate_synthetic_training_set

CAMERA_SPEED = 2


def _suite(n, seed, camera=0):
    return generate_synthetic_training_set(
        SyntheticConfig(n_sequences=n, n_frames=3, camera_speed=camera), seed)


@pytest.fixture(scope="session")
def boundary_training_set():
    """20 training sequences: half with a static camera, half with camera translation."""
    return _suite(10, 11) + _suite(10, 12, CAMERA_SPEED)


@pytest.fixture(scope="session")
def trained_detector(boundary_training_set):
    start = time.perf_counter()
    det = MotionBoundaryDetector().fit([s.frames for s in boundary_training_set],
                                       [s.boundaries for s in boundary_training_set])
    det.fit_seconds_ = time.perf_counter() - start
    return det


@pytest.fixture(scope="session")
def forest_file(trained_detector, tmp_path_factory):
    path = tmp_path_factory.mktemp("models") / "forest.bin"
    trained_detector.forest_.save(path)
    return path


@pytest.fixture(scope="session")
def heldout(trained_detector):
    """Maps, truth masks and truth boxes for 10 held-out sequences per condition."""
    out = {}
    for name, camera in (("static", 0), ("camera", CAMERA_SPEED)):
        seqs = _suite(10, 100 + camera, camera)
        maps, truths, boxes = [], [], []
        for s in seqs:
            maps += trained_detector.transform(s.frames)
            truths += list(s.boundaries[:-1])
            boxes += s.boxes[:-1]
        out[name] = {"sequences": seqs, "maps": maps, "truths": truths, "boxes": boxes}
    return out


@pytest.fixture(scope="session")
def tiny_detector():
    """A small, quickly trained detector for plumbing tests."""
    seqs = _suite(3, 5)
    params = ForestParams(tree_count=2, max_depth=6, min_samples_leaf=4)
    return MotionBoundaryDetector(forest_params=params).fit(
        [s.frames for s in seqs], [s.boundaries for s in seqs])


_ACCEPTANCE = pytest.StashKey()


@pytest.fixture
def criterion(request):
    """``report(n, ok, detail)`` prints one PASS/FAIL line and keeps it for the summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, {})

    def report(n, ok, detail):
        line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines[n] = line
        print(line)
        return ok
    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def pipeline_assets(tiny_detector, tmp_path_factory):
    """Model files plus a small labelled dataset for the end-to-end pipeline."""
    from action_region.abnormality import ColorHistogramSceneClassifier, learn_scene_prior
    from action_region.classifier import DESCRIPTOR_LENGTH, LinearActionClassifier
    from action_region.synthetic import (ACTIONS, NORMAL_SCENES, SCENES, abnormality_suite,
                                         write_dataset)

    root = tmp_path_factory.mktemp("pipeline")
    paths = {"forest": root / "forest.bin", "action_model": root / "action.bin",
             "scene_model": root / "scene.json", "prior": root / "prior.json"}
    tiny_detector.forest_.save(paths["forest"])
    rng = np.random.default_rng(0)
    X = rng.random((40, DESCRIPTOR_LENGTH))
    LinearActionClassifier(epochs=5).fit(X, np.repeat(ACTIONS, 10)).save(paths["action_model"])
    suite = abnormality_suite(3, n_frames=2, size=64)
    ColorHistogramSceneClassifier().fit([s.frames[0] for s in suite],
                                        [s.labels["scene"] for s in suite]).save(paths["scene_model"])
    pairs = [(a, s) for a in ACTIONS for s in NORMAL_SCENES[a]]
    learn_scene_prior([a for a, _ in pairs], [s for _, s in pairs], ACTIONS, SCENES).save(paths["prior"])
    manifests = write_dataset(suite[::5], root / "data")
    return {"paths": {k: str(v) for k, v in paths.items()}, "manifests": manifests, "root": root}
