"""Container round trips, corruption diagnostics, and report manifests."""
import json
import struct

import numpy as np
import pytest

from hgllim.containers import (CONTAINER_VERSION, FEATURE_MAGIC, MODEL_MAGIC,
                               load_features, load_model, model_to_json_dict,
                               save_features, save_model, save_model_json)
from hgllim.errors import ContractError, DataError
from hgllim.manifest import (ExperimentManifest, hash_arrays, hash_files,
                             read_report_manifest, write_report_csv)
from hgllim.model import OutputLayout
from hgllim.synthetic import random_model


def example_model(k=3, d=7, lt=2, lw=1, seed=4):
    return random_model(k, d, lt, lw, seed=seed)


def test_model_round_trip_is_byte_exact(tmp_path):
    model = example_model()
    layout = OutputLayout(n_angles=2, has_shift=False)
    first = tmp_path / "a.hglm"
    second = tmp_path / "b.hglm"
    save_model(first, model, layout)
    loaded, loaded_layout = load_model(first)
    save_model(second, loaded, loaded_layout)
    assert first.read_bytes() == second.read_bytes()
    assert loaded_layout == layout
    for name in ("priors", "means", "covariances", "maps", "offsets",
                 "noise_vars"):
        assert getattr(loaded, name).tobytes() == getattr(model, name).tobytes()
    assert loaded.latent == model.latent


def test_model_layout_with_shift_round_trips(tmp_path):
    model = example_model(lt=4)
    layout = OutputLayout(n_angles=2, has_shift=True)
    path = tmp_path / "m.hglm"
    save_model(path, model, layout)
    _, got = load_model(path)
    assert got.n_angles == 2 and got.has_shift


def test_save_model_rejects_mismatched_layout(tmp_path):
    model = example_model(lt=2)
    with pytest.raises(ContractError):
        save_model(tmp_path / "m.hglm", model,
                   OutputLayout(n_angles=2, has_shift=True))


def test_load_model_rejects_bad_magic(tmp_path):
    path = tmp_path / "m.hglm"
    save_model(path, example_model())
    data = bytearray(path.read_bytes())
    data[:4] = b"NOPE"
    path.write_bytes(bytes(data))
    with pytest.raises(DataError, match="bad magic"):
        load_model(path)


def test_load_model_rejects_bad_version(tmp_path):
    path = tmp_path / "m.hglm"
    save_model(path, example_model())
    data = bytearray(path.read_bytes())
    struct.pack_into("<I", data, 4, CONTAINER_VERSION + 9)
    path.write_bytes(bytes(data))
    with pytest.raises(DataError, match="version"):
        load_model(path)


def test_load_model_rejects_truncation(tmp_path):
    path = tmp_path / "m.hglm"
    save_model(path, example_model())
    data = path.read_bytes()
    path.write_bytes(data[:-16])
    with pytest.raises(DataError, match="bytes"):
        load_model(path)
    path.write_bytes(data[:10])
    with pytest.raises(DataError):
        load_model(path)


def test_load_model_reports_non_finite_offset(tmp_path):
    path = tmp_path / "m.hglm"
    save_model(path, example_model())
    data = bytearray(path.read_bytes())
    header = struct.calcsize("<4sIIIIIII")
    struct.pack_into("<d", data, header + 5 * 8, float("nan"))
    path.write_bytes(bytes(data))
    with pytest.raises(DataError, match="float offset 5"):
        load_model(path)


def test_load_model_rejects_invalid_payload_values(tmp_path):
    # flip one prior negative: structurally fine, semantically invalid
    model = example_model(k=2)
    path = tmp_path / "m.hglm"
    save_model(path, model)
    data = bytearray(path.read_bytes())
    header = struct.calcsize("<4sIIIIIII")
    low = model.latent.total_dim
    prior_offset = header + (low + low * low) * 8
    struct.pack_into("<d", data, prior_offset, -0.25)
    path.write_bytes(bytes(data))
    with pytest.raises(DataError, match="invalid model payload"):
        load_model(path)


def test_feature_round_trip_is_byte_exact(tmp_path):
    rng = np.random.default_rng(0)
    features = rng.standard_normal((13, 5))
    first = tmp_path / "a.hgfx"
    second = tmp_path / "b.hgfx"
    save_features(first, features)
    loaded = load_features(first)
    np.testing.assert_array_equal(loaded, features)
    save_features(second, loaded)
    assert first.read_bytes() == second.read_bytes()
    assert first.read_bytes()[:4] == FEATURE_MAGIC


def test_feature_container_header_matches_shape(tmp_path):
    path = tmp_path / "f.hgfx"
    save_features(path, np.zeros((4, 6)))
    magic, version, n, d = struct.unpack_from("<4sIII", path.read_bytes())
    assert (magic, version, n, d) == (FEATURE_MAGIC, CONTAINER_VERSION, 4, 6)


def test_feature_container_corruption_diagnostics(tmp_path):
    path = tmp_path / "f.hgfx"
    save_features(path, np.ones((3, 2)))
    data = bytearray(path.read_bytes())
    data[:4] = MODEL_MAGIC
    path.write_bytes(bytes(data))
    with pytest.raises(DataError, match="bad magic"):
        load_features(path)
    save_features(path, np.ones((3, 2)))
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(DataError, match="expected"):
        load_features(path)


def test_save_features_rejects_bad_input(tmp_path):
    with pytest.raises(ContractError):
        save_features(tmp_path / "f.hgfx", np.zeros(5))
    with pytest.raises(ContractError):
        save_features(tmp_path / "f.hgfx", np.array([[1.0, np.inf]]))


def test_json_export_mirrors_the_model(tmp_path):
    model = example_model(k=2, d=4, lt=2, lw=1)
    payload = model_to_json_dict(model)
    assert payload["n_components"] == 2
    assert payload["feature_dim"] == 4
    assert len(payload["components"]) == 2
    comp = payload["components"][0]
    np.testing.assert_allclose(comp["map"], model.maps[0])
    np.testing.assert_allclose(comp["noise_diag"], model.noise_vars[0])
    path = tmp_path / "m.json"
    save_model_json(path, model)
    assert json.loads(path.read_text()) == payload


def test_hash_arrays_is_content_sensitive():
    a = np.arange(6, dtype=np.float64)
    assert hash_arrays(a) == hash_arrays(a.copy())
    assert hash_arrays(a) != hash_arrays(a + 1)
    assert hash_arrays(a) != hash_arrays(a.reshape(2, 3))
    assert hash_arrays(a, a) != hash_arrays(a)


def test_hash_files_matches_content(tmp_path):
    p1 = tmp_path / "a.bin"
    p2 = tmp_path / "b.bin"
    p1.write_bytes(b"hello world")
    p2.write_bytes(b"hello world")
    assert hash_files(p1) == hash_files(p2)
    p2.write_bytes(b"hello worlds")
    assert hash_files(p1) != hash_files(p2)


def test_manifest_json_round_trip():
    record = ExperimentManifest(command="train", dataset_hash="ab12",
                                tool_version="0.1.0", seconds=1.5,
                                n_components=5, latent_dim=2,
                                variant="hgllim_pose", seed=7,
                                extra={"note": "x"})
    back = ExperimentManifest.from_json(record.to_json())
    assert back == record


def test_manifest_requires_core_fields():
    with pytest.raises(DataError, match="missing"):
        ExperimentManifest.from_json('{"command": "train"}')
    with pytest.raises(DataError, match="JSON"):
        ExperimentManifest.from_json("not json")


def test_report_embeds_and_recovers_the_manifest(tmp_path):
    record = ExperimentManifest(command="evaluate", dataset_hash="cd34",
                                tool_version="0.1.0", sigma_frac=0.1)
    path = tmp_path / "report.csv"
    write_report_csv(path, ["angle", "mae"],
                     [["pitch", 8.41], ["yaw", 7.87]], record)
    text = path.read_text()
    assert text.startswith("# manifest {")
    assert "\r" not in text
    assert read_report_manifest(path) == record
    body = [line for line in text.splitlines() if not line.startswith("#")]
    assert body[0] == "angle,mae"
    assert body[1] == "pitch,8.41"


def test_report_without_manifest_reads_none(tmp_path):
    path = tmp_path / "r.csv"
    write_report_csv(path, ["a"], [[1.0]])
    assert read_report_manifest(path) is None


def test_report_rejects_ragged_rows(tmp_path):
    with pytest.raises(DataError, match="cells"):
        write_report_csv(tmp_path / "r.csv", ["a", "b"], [[1.0]])


def test_report_floats_round_trip_exactly(tmp_path):
    value = 0.1 + 0.2
    path = tmp_path / "r.csv"
    write_report_csv(path, ["v"], [[value]])
    line = path.read_text().splitlines()[1]
    assert float(line) == value
