import json

import pytest

from demoforge.demo import load_demopack, read_cloud
from demoforge.heatmap import decode_hmp
from demoforge.render import decode_img
from demoforge.replay import build_conventional, build_optimized, read_buffer

from pipeline import cli, run_pipeline


@pytest.fixture(scope="module")
def outputs(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipe")
    return root, run_pipeline(root, seed=3)


def test_pipeline_writes_everything(outputs):
    _, files = outputs
    for name in (
        "buf_opt/buffer_index.jsonl",
        "buf_opt/buffer_stats.json",
        "buf_opt/schedule.json",
        "buf_opt/temporal_histogram.png",
        "aug/augmented.jsonl",
        "views/view_pz_rgb.img",
        "views/view_pz_inv_rgb.img",
        "views/views.png",
        "loc/gt_heatmaps.hmp",
        "loc/localization.json",
        "loc/heatmaps.png",
        "diag/verdict.json",
        "diag/report.txt",
        "diag/curves.png",
        "demos/validation.json",
    ):
        assert name in files, name
    assert files["views/views.png"][:8] == b"\x89PNG\r\n\x1a\n"


def test_reported_ratio_matches_oracle(outputs):
    root, files = outputs
    demos = [load_demopack(root / "demos" / n) for n in ("pick_place", "zigzag_wipe", "drawer_boundary")]
    conv = sum(len(build_conventional(d, 10)) for d in demos)
    opt = sum(len(build_optimized(d, 10)) for d in demos)
    stats = json.loads(files["buf_opt/buffer_stats.json"])
    assert stats["conventional_count"] == conv and stats["optimized_count"] == opt
    assert stats["comparison"]["count_ratio"] == pytest.approx(opt / conv)


def test_buffer_cloud_refs_resolve(outputs):
    root, _ = outputs
    buf = read_buffer(root / "buf_opt")
    for s in buf.samples[:5]:
        assert len(read_cloud(root / "buf_opt" / s.obs_cloud)) > 0


def test_augment_records_provenance(outputs):
    root, files = outputs
    recs = [json.loads(l) for l in files["aug/augmented.jsonl"].decode().splitlines()]
    assert {r["mix_type"] for r in recs} <= {"none", "intra", "cross"}
    for r in recs[:10]:
        assert len(read_cloud(root / "aug" / r["cloud"])) == r["points"]
        assert len(decode_hmp(files[f"aug/{r['heatmaps']}"])) == 5


def test_localize_and_render(outputs):
    _, files = outputs
    doc = json.loads(files["loc/localization.json"])
    assert doc["stage"] == "fine" and doc["error_inf_m"] <= 0.002
    rgb = decode_img(files["views/view_pz_rgb.img"])
    assert rgb.shape == (224, 224, 3)


def test_localize_falls_back_in_free_space(tmp_path):
    cli("synth-demo", "pick_place", "--out", tmp_path / "d")
    code, out = cli("localize", "--demo", tmp_path / "d", "--frame", "0", "--target", "0.2", "0.0", "1.5")
    doc = json.loads(out)
    assert code == 0 and doc["fallback"] and doc["stage"] == "coarse"


def test_diagnose_verdict(outputs):
    _, files = outputs
    assert json.loads(files["diag/verdict.json"])["scenario"] == "C_generalization_gap"


def test_unknown_subcommand(capsys):
    assert cli("bogus") == (2, "")
    assert "usage" in capsys.readouterr().err


def test_domain_error_json(tmp_path, capsys):
    code, _ = cli("stats", str(tmp_path / "missing"), "--json-errors")
    assert code == 1
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "FileNotFoundError"


def test_bad_config_is_domain_error(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[buffer]\nstride = 2\n")
    assert cli("diagnose", "x.csv", "--out", str(tmp_path), "--config", str(cfg))[0] == 1


def test_ingest_rejects_corrupt(tmp_path):
    assert cli("synth-demo", "pick_place", "--out", tmp_path / "d")[0] == 0
    p = tmp_path / "d" / "frame_0003.bpc"
    p.write_bytes(p.read_bytes()[:-1])
    code, out = cli("ingest", tmp_path / "d", "--out", tmp_path / "ok")
    assert code == 1
    rep = json.loads((tmp_path / "ok" / "validation.json").read_text())
    assert rep[0]["violations"][0]["kind"] == "CorruptCloud"


def test_synth_contracts(tmp_path):
    code, out = cli("synth-demo", "low_clearance", "--seed", "7", "--out", tmp_path / "lc")
    assert code == 0 and json.loads(out)["min_keypose_z_above_floor"] < 0.008
    code, out = cli("synth-demo", "drawer_boundary", "--out", tmp_path / "db")
    assert len(json.loads(out)["boundary_keyposes"]) == 1
    cli("synth-demo", "low_clearance", "--seed", "7", "--out", tmp_path / "lc2")
    for p in sorted((tmp_path / "lc").iterdir()):
        assert p.read_bytes() == (tmp_path / "lc2" / p.name).read_bytes()


def test_extract_keyframes_zigzag(tmp_path):
    cli("synth-demo", "zigzag_wipe", "--out", tmp_path / "z")
    code, out = cli("extract-keyframes", tmp_path / "z", "--via", "--via-count", "2")
    assert code == 0
    assert json.loads(out)["via_keyframes"][:2] == [25, 55]


def test_extract_keyframes_repairs(tmp_path):
    cli("synth-demo", "cluttered_zone", "--out", tmp_path / "c")
    code, out = cli("extract-keyframes", tmp_path / "c", "--zones", tmp_path / "c" / "risk_zones.json")
    origins = [k["origin"] for k in json.loads(out)["repaired_keyposes"]]
    assert code == 0 and origins.count("defensive") >= 2


def test_stats_creates_out_dir(outputs, tmp_path):
    root, _ = outputs
    out = tmp_path / "fresh" / "stats"
    code, text = cli("stats", str(root / "buf_opt"), "--compare", str(root / "buf_conv"), "--out", str(out))
    assert code == 0
    assert (out / "buffer_stats.json").is_file()
    assert (out / "temporal_histogram.png").is_file()
