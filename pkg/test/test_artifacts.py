import sys
import os

# getting the name of the directory
# where the this file is present.
current = os.path.dirname(os.path.realpath(__file__))

# Getting the parent directory name
# where the current directory is present.
parent = os.path.dirname(current)

# adding the parent directory to
# the sys.path.
sys.path.append(parent)

import json

from src.artifacts import (
    ArtifactWriter,
    BranchPointRecord,
    BranchRecord,
    CrossingRecord,
    FoldRecord,
    load_model,
)


def sample_branch() -> BranchRecord:
    return BranchRecord(
        closed=True,
        stop_reason="closed",
        arclength=12.5,
        points=[BranchPointRecord(s=0.0, lam=0.35, amp=1.2)],
        folds=[FoldRecord(lam=0.31, side="left", s=3.0, quadratic=True)],
        crossings=[
            CrossingRecord.labelled(0, 0.0, 0.35, "2"),
            CrossingRecord.labelled(1, 6.0, 0.35, None),
        ],
    )


def test_branch_json_uses_lambda_key(tmp_path):
    writer = ArtifactWriter(str(tmp_path))
    writer.write_model("branch.json", sample_branch())
    with open(tmp_path / "branch.json", encoding="utf-8") as f:
        data = json.load(f)
    assert data["points"][0]["lambda"] == 0.35
    assert "lam" not in data["points"][0]
    assert data["folds"][0]["lambda"] == 0.31
    assert data["crossings"][0]["lambda"] == 0.35
    assert data["crossings"][0]["orbit"] == "orbits.json#2"
    assert data["crossings"][1]["orbit"] is None


def test_branch_json_reads_back(tmp_path):
    writer = ArtifactWriter(str(tmp_path))
    writer.write_model("branch.json", sample_branch())
    assert load_model(str(tmp_path / "branch.json"), BranchRecord) == sample_branch()
    assert writer.files == ["branch.json"]


def test_load_model_ignores_missing_and_empty(tmp_path):
    assert load_model(str(tmp_path / "missing.json"), BranchRecord) is None
    (tmp_path / "empty.json").write_text("", encoding="utf-8")
    assert load_model(str(tmp_path / "empty.json"), BranchRecord) is None


def test_corrupted_artifact_is_backed_up(tmp_path):
    path = tmp_path / "branch.json"
    path.write_text("{not json", encoding="utf-8")
    assert load_model(str(path), BranchRecord) is None
    assert (tmp_path / "branch.json.corrupted").exists()
