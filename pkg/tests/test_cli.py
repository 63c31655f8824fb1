import csv
import json

import numpy as np
import pytest

from nrqi.cli import main
from nrqi.harness import CorpusConfig, generate_base_image, generate_corpus, write_corpus
from nrqi.image_io import Image, load_image, save_image, to_unit_range, write_manifest


def run(*argv):
    return main([str(a) for a in argv])


def write_sequence(d, n, seed=0, size=48, name="seq"):
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(n):
        img = generate_base_image(seed, size, phase=0.3 * i, frame_seed=1000 + i)
        p = d / f"f{i:03d}.pgm"
        save_image(Image(np.round(img.pixels * 255), value_range="uint8"), p)
        paths.append(p)
    write_manifest(d / "manifest.json", paths, name, "pt")
    return d / "manifest.json"


@pytest.fixture
def weights(tmp_path):
    p = tmp_path / "w.json"
    p.write_text(json.dumps({"w1": 0.5, "w2": -0.3, "w3": -0.2}))
    return p


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("corpus")
    cfg = CorpusConfig(n_patients=10, sequences_per_patient=1, frames_per_sequence=5, size=48, seed=3)
    return write_corpus(generate_corpus(cfg), d, cfg)


def test_preprocess_identity_and_provenance(tmp_path):
    m = write_sequence(tmp_path / "in", 3)
    assert run("preprocess", m, "--out-dir", tmp_path / "out", "--gamma", 1, "--sigma", 0, "--no-normalize") == 0
    src = load_image(tmp_path / "in" / "f001.pgm")
    out = load_image(tmp_path / "out" / "frame0001.f32")
    assert np.array_equal(out.pixels, to_unit_range(src).astype(np.float32).astype(np.float64))
    prov = json.loads((tmp_path / "out" / "provenance.json").read_text())
    assert prov["config"] == {"gamma": 1.0, "gaussian_sigma": None, "normalize": False,
                              "steps_order": ["normalize", "gamma", "gaussian"]}


def test_preprocess_config_file_overrides_flags(tmp_path):
    m = write_sequence(tmp_path / "in", 2)
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"preprocess": {"gamma": 0.6}}))
    assert run("preprocess", m, "--out-dir", tmp_path / "o", "--gamma", 0.9, "--config", cfg) == 0
    assert json.loads((tmp_path / "o" / "provenance.json").read_text())["config"]["gamma"] == 0.6


def test_preprocess_rerun_byte_identical(tmp_path):
    m = write_sequence(tmp_path / "in", 3)
    run("preprocess", m, "--out-dir", tmp_path / "a")
    run("preprocess", m, "--out-dir", tmp_path / "b")
    for name in ("frame0000.f32", "frame0002.f32", "provenance.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_score_skip_frames(tmp_path, weights):
    m = write_sequence(tmp_path / "s", 50, size=32)
    assert run("score", m, "--weights", weights, "--out", tmp_path / "r.json", "--csv", tmp_path / "r.csv",
               "--skip-frames", 10) == 0
    rep = json.loads((tmp_path / "r.json").read_text())
    assert rep["skip_frames"] == 10 and len(rep["per_frame"]) == 50
    with open(tmp_path / "r.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["frame_id", "qi_h", "qi_v", "qi_dl", "qi_dr", "qi"] and len(rows) == 51


def test_score_missing_weights_writes_nothing(tmp_path, capsys):
    m = write_sequence(tmp_path / "s", 2)
    assert run("score", m, "--weights", tmp_path / "none.json", "--out", tmp_path / "r.json") != 0
    assert not (tmp_path / "r.json").exists()
    rec = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert rec["command"] == "score" and rec["error"] == "usage"


def test_score_invalid_weights(tmp_path):
    m = write_sequence(tmp_path / "s", 2)
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"w1": -0.5, "w2": -0.3, "w3": -0.2}))
    errs = tmp_path / "errors.jsonl"
    assert run("score", m, "--weights", bad, "--out", tmp_path / "r.json", "--errors", errs) == 2
    assert json.loads(errs.read_text())["error"] == "usage"


def test_score_empty_sequence(tmp_path, weights):
    (tmp_path / "m.json").write_text(json.dumps({"sequence_id": "e", "frames": []}))
    assert run("score", tmp_path / "m.json", "--weights", weights, "--out", tmp_path / "r.json") == 1
    assert not (tmp_path / "r.json").exists()


def test_score_degenerate_frame(tmp_path, weights):
    m = write_sequence(tmp_path / "s", 3)
    save_image(Image(np.full((48, 48), 9), value_range="uint8"), tmp_path / "s" / "f001.pgm")
    assert run("score", m, "--weights", weights, "--out", tmp_path / "r.json") == 1
    assert not (tmp_path / "r.json").exists()
    assert run("score", m, "--weights", weights, "--out", tmp_path / "r.json", "--continue") == 0
    rep = json.loads((tmp_path / "r.json").read_text())
    assert len(rep["per_frame"]) == 2 and rep["invalid"][0]["index"] == 1


def test_fit_weights(tmp_path, corpus_dir):
    assert run("fit-weights", corpus_dir, "--out", tmp_path / "w.json", "--folds", tmp_path / "f.json") == 0
    w = json.loads((tmp_path / "w.json").read_text())
    assert w["w1"] > 0 and w["w2"] < 0 and w["w3"] < 0
    assert abs(abs(w["w1"]) + abs(w["w2"]) + abs(w["w3"]) - 1) < 1e-9
    assert len(json.loads((tmp_path / "f.json").read_text())["folds"]) == 10


def test_fit_weights_single_patient(tmp_path):
    cfg = CorpusConfig(n_patients=1, sequences_per_patient=1, frames_per_sequence=3, size=32)
    path = write_corpus(generate_corpus(cfg), tmp_path / "c", cfg)
    assert run("fit-weights", path, "--out", tmp_path / "w.json") == 2
    assert not (tmp_path / "w.json").exists()


def test_compare_identical(tmp_path):
    m = write_sequence(tmp_path / "s", 6)
    assert run("compare", "--pre", m, "--post", m, "--out", tmp_path / "c.json") == 0
    rep = json.loads((tmp_path / "c.json").read_text())
    assert rep["metrics"] and all(v == 0 for mt in rep["metrics"] for v in mt["per_frame_diffs"])


def test_compare_misaligned(tmp_path):
    a = write_sequence(tmp_path / "a", 3)
    b = write_sequence(tmp_path / "b", 4)
    assert run("compare", "--pre", a, "--post", b, "--out", tmp_path / "c.json") == 1
    assert not (tmp_path / "c.json").exists()


def test_compare_corpus_outputs(tmp_path, corpus_dir):
    out = tmp_path / "c.json"
    assert run("compare", "--corpus", corpus_dir, "--out", out, "--csv", tmp_path / "c.csv",
               "--plot-csv", tmp_path / "p.csv", "--svg", tmp_path / "p.svg") == 0
    rows = (tmp_path / "c.csv").read_text().splitlines()
    assert rows[0] == "metric,median,mean,std"
    plot = (tmp_path / "p.csv").read_text().splitlines()
    assert plot[0] == "frame_index,sequence_id,sequence_frame,qi_pre,qi_post" and len(plot) == 51
    assert (tmp_path / "p.svg").read_text().lstrip().startswith("<?xml")
    rep = json.loads(out.read_text())
    assert rep["weights_used"]["flags"] == ["default_uniform"]


def test_compare_degraded_vs_clean(tmp_path):
    clean_paths, bad_paths = [], []
    (tmp_path / "clean").mkdir()
    (tmp_path / "bad").mkdir()
    rng = np.random.default_rng(0)
    for i in range(8):
        img = generate_base_image(4, 64, phase=0.3 * i, frame_seed=i).pixels
        noisy = np.clip(img + rng.normal(0, 0.08, img.shape), 0, 1)
        for arr, d, paths in ((img, "clean", clean_paths), (noisy, "bad", bad_paths)):
            p = tmp_path / d / f"f{i}.pgm"
            save_image(Image(np.round(arr * 255), value_range="uint8"), p)
            paths.append(p)
    write_manifest(tmp_path / "pre.json", bad_paths, "bad")
    write_manifest(tmp_path / "post.json", clean_paths, "clean")
    assert run("compare", "--pre", tmp_path / "pre.json", "--post", tmp_path / "post.json",
               "--out", tmp_path / "c.json") == 0
    metrics = {m["name"]: m for m in json.loads((tmp_path / "c.json").read_text())["metrics"]}
    assert metrics["qi"]["mean"] > 0
    higher = [n for n in ("qi", "cnr", "tenengrad", "entropy") if n in metrics]
    assert max(higher, key=lambda n: abs(metrics[n]["mean"])) == "qi"


def test_simulate_single_image(tmp_path):
    save_image(Image(np.round(generate_base_image(1, 32).pixels * 255), value_range="uint8"), tmp_path / "a.pgm")
    assert run("simulate", "--input", tmp_path / "a.pgm", "--kind", "gaussian_noise", "--level", 0.05,
               "--seed", 3, "--out", tmp_path / "n.f32") == 0
    assert run("simulate", "--input", tmp_path / "a.pgm", "--kind", "gaussian_noise", "--level", 0.05,
               "--seed", 3, "--out", tmp_path / "m.f32") == 0
    assert (tmp_path / "n.f32").read_bytes() == (tmp_path / "m.f32").read_bytes()


def test_simulate_corpus_uses_env_seed(tmp_path, monkeypatch):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"corpus": {"n_patients": 2, "sequences_per_patient": 1,
                                          "frames_per_sequence": 2, "size": 32}}))
    monkeypatch.setenv("NRQI_SEED", "77")
    assert run("simulate", "--out-dir", tmp_path / "c", "--config", cfg) == 0
    doc = json.loads((tmp_path / "c" / "corpus.json").read_text())
    assert doc["config"]["seed"] == 77 and len(doc["patients"]) == 2


def test_features_and_pdfmc(tmp_path):
    m = write_sequence(tmp_path / "s", 2)
    assert run("features", m, "--out", tmp_path / "f.csv") == 0
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert len(lines) == 3 and len(lines[0].split(",")) == 17
    assert run("pdfmc", "--manifest", m, "--bins", 21, "--out", tmp_path / "p.csv") == 0
    assert len((tmp_path / "p.csv").read_text().splitlines()) == 1 + 2 * 21
