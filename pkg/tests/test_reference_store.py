import pytest

from bv_control import JumpControl
from reference_store import ReferenceStore


@pytest.fixture
def store(tmp_path):
    return ReferenceStore(str(tmp_path / "references"))


def test_key_format():
    assert ReferenceStore.key(2, "full", 17) == "example2_full_k17"


def test_save_and_load(store):
    control = JumpControl.from_jumps(-0.58747, [(0.29151, 1.46864), (0.70849, -0.58747)])
    path = store.save_reference("example2_variational_k14", control)
    assert path.endswith("example2_variational_k14.json")

    loaded = store.load_reference("example2_variational_k14")
    assert loaded.offset == control.offset
    assert loaded.jumps == control.jumps


def test_missing_reference(store):
    assert store.load_reference("example2_full_k17") is None


def test_corrupt_reference_is_ignored(store):
    with open(store.path_for("example2_full_k17"), "w") as f:
        f.write("{not json")
    assert store.load_reference("example2_full_k17") is None

    with open(store.path_for("example2_full_k18"), "w") as f:
        f.write('{"offset": "high"}')
    assert store.load_reference("example2_full_k18") is None
