"""Shared test fixtures: tiny on-disk datasets built by hand."""

import numpy as np
import pytest

from semsal.dataio import save_manifest, write_feature_blob, write_map

_ACCEPTANCE_RESULTS: dict[str, str] = {}


def pytest_runtest_logreport(report):
    """Track acceptance-criterion outcomes for the end-of-run summary."""
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call":
        _ACCEPTANCE_RESULTS[report.nodeid] = "PASS" if report.passed else "FAIL"
    elif report.when == "setup" and not report.passed:
        _ACCEPTANCE_RESULTS[report.nodeid] = \
            "SKIP" if report.skipped else "FAIL"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for nodeid in sorted(_ACCEPTANCE_RESULTS):
        name = nodeid.split("::")[-1]
        terminalreporter.write_line(f"{name}: {_ACCEPTANCE_RESULTS[nodeid]}")


def build_dataset(root, images, vectors, descriptors=None):
    """Write a manifest plus blobs/maps for hand-constructed image dicts.

    ``images`` entries may carry numpy arrays under ``gt`` and ``maps``;
    those are written as PGM files and replaced by relative paths.
    """
    docs = []
    for img in images:
        entry = dict(img)
        rec_id = entry["id"]
        if "gt" in entry:
            rel = f"gt_{rec_id}.pgm"
            write_map(entry.pop("gt"), root / rel)
            entry["gt_mask"] = rel
        if "maps" in entry:
            rels = []
            for i, m in enumerate(entry.pop("maps")):
                rel = f"map_{rec_id}_{i}.pgm"
                write_map(m, root / rel)
                rels.append(rel)
            entry["candidate_maps"] = rels
        if "pixels" in entry:
            rel = f"img_{rec_id}.pgm"
            write_map(entry.pop("pixels"), root / rel)
            entry["image"] = rel
        docs.append(entry)
    manifest = {"feature_blob": "features.srf", "images": docs}
    write_feature_blob(np.asarray(vectors, dtype=np.float32),
                       root / "features.srf")
    if descriptors is not None:
        write_feature_blob(np.asarray(descriptors, dtype=np.float32),
                           root / "descriptors.srf")
        manifest["descriptor_blob"] = "descriptors.srf"
    path = root / "manifest.json"
    save_manifest(manifest, path)
    return path


def proposal(pid, box, confidence=0.9, feature=0, context=None):
    return {"id": pid, "box": list(box), "confidence": confidence,
            "feature": feature,
            "context_feature": feature if context is None else context}


@pytest.fixture
def rng():
    return np.random.default_rng(20260814)
