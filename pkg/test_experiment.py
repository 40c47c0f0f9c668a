import csv
import json

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

import frozenrb.config as config_module
from frozenrb.config import DEFAULT_SEED, Settings, build_config, parse_config
from frozenrb.exceptions import ArtifactError, ConfigError, FrozenRBError
from frozenrb.grid import GridSpec, project_initial
from frozenrb.main import main
from frozenrb.reduction import EIData
from frozenrb.schemas import ErrorRecord, Scheme, TrajectoryManifest
from frozenrb.services.model_store import ModelStore
from frozenrb.services.study_service import StudyService, initial_datum, output_frames, step_errors
from frozenrb.utils.field_io import load_trajectory, read_field, save_trajectory, write_field
from frozenrb.utils.plotting import render_error_plot, render_field_svg


@pytest.fixture(scope="module")
def smoke_model(tmp_path_factory):
    """Offline stage and study of the smoke preset, run once for the module."""
    root = tmp_path_factory.mktemp("smoke")
    service = StudyService(build_config("smoke", {"output_dir": root}), workers=1)
    service.run_offline(root / "model")
    records = service.run_study(root / "model", root / "study")
    return service, root, records


def test_reference_preset_defaults():
    config = build_config("paper-burgers")
    assert (config.nx, config.ny, config.lx, config.ly) == (120, 60, 2.0, 1.0)
    assert config.t_end == 0.3 and config.steps == 100
    assert config.dt == pytest.approx(0.003)
    assert config.training_mus == (1.0, 1.1, 1.2, 1.3, 1.4, 1.5, 1.6, 1.7, 1.8, 1.9, 2.0)
    assert config.n_sweep == (5, 10, 15, 20)
    assert [config.interpolation_points(n) for n in config.n_sweep] == [9, 18, 27, 36]
    assert (config.n_max, config.m_max) == (20, 38)
    assert config.test_count == 100
    assert config.seed == DEFAULT_SEED
    assert config.ei_selection == "relative"


def test_half_resolution_preset():
    config = build_config("paper-burgers-half")
    assert config.grid == GridSpec(nx=60, ny=30)
    assert config.steps == 100


def test_short_preset_names():
    assert build_config("burgers") == build_config("paper-burgers")
    assert build_config("burgers-half") == build_config("paper-burgers-half")
    assert build_config() == build_config("paper-burgers")
    assert Settings().default_preset == "paper-burgers"


def test_output_dir_follows_settings(monkeypatch, tmp_path):
    monkeypatch.setenv("FROZENRB_OUTPUT_DIR", str(tmp_path / "runs"))
    monkeypatch.setattr(config_module, "settings", Settings())
    assert build_config("smoke").output_dir == tmp_path / "runs"
    assert build_config("smoke", {"output_dir": tmp_path / "cli"}).output_dir == tmp_path / "cli"
    assert main(["--preset", "smoke", "simulate", "--mu", "1.0"]) == 0
    assert (tmp_path / "runs" / "detailed_mu1" / "frozen" / "manifest.json").is_file()


def test_empty_file_gives_preset(tmp_path):
    path = tmp_path / "study.env"
    path.write_text("")
    assert parse_config(path, "paper-burgers") == build_config("paper-burgers")


def test_file_overrides(tmp_path):
    path = tmp_path / "study.env"
    path.write_text("NX=60\nny=30\nK=50\ntraining_mus=1.0, 1.5, 2.0\nn_sweep=4,2\n")
    config = parse_config(path, "paper-burgers")
    assert (config.nx, config.ny, config.steps) == (60, 30, 50)
    assert config.training_mus == (1.0, 1.5, 2.0)
    assert config.n_sweep == (2, 4)


def test_cli_overrides_win_over_file(tmp_path):
    path = tmp_path / "study.env"
    path.write_text("nx=60\nseed=1\n")
    config = parse_config(path, "paper-burgers", {"nx": 40, "seed": 7})
    assert (config.nx, config.seed) == (40, 7)


@pytest.mark.parametrize(
    "content",
    [
        "K=0\n",
        "nx=1\n",
        "unknown_key=3\n",
        "mu_min=0.5\n",
        "training_mus=1.0,2.5\n",
        "training_mus=1.5,1.5\n",
        "t=-1\n",
        "nx\n",
        "n_sweep=0\n",
        "nx=60\nthis line is garbage\n",
        "ei_selection=sideways\n",
    ],
)
def test_rejected_configuration(tmp_path, content):
    path = tmp_path / "study.env"
    path.write_text(content)
    with pytest.raises(ConfigError):
        parse_config(path, "paper-burgers")


def test_missing_file_and_unknown_preset(tmp_path):
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "missing.env", "paper-burgers")
    with pytest.raises(ConfigError):
        build_config("no-such-preset")


def test_settings_from_environment(monkeypatch):
    monkeypatch.setenv("FROZENRB_WORKERS", "3")
    monkeypatch.setenv("FROZENRB_LOG_LEVEL", "DEBUG")
    settings = Settings()
    assert settings.workers == 3
    assert settings.log_level == "DEBUG"


def test_test_parameters_are_seeded():
    first = StudyService(build_config("paper-burgers")).test_parameters()
    second = StudyService(build_config("paper-burgers")).test_parameters()
    other = StudyService(build_config("paper-burgers", {"seed": 1})).test_parameters()
    assert len(first) == 100
    assert_array_equal(first, second)
    assert not np.array_equal(first, other)
    assert np.all((first >= 1.0) & (first <= 2.0))


def test_output_frames():
    assert output_frames(100) == [0, 50, 100]
    assert output_frames(1) == [0, 1]


def test_step_errors():
    detailed = np.array([[1.0, 0.0], [0.0, 2.0]])
    psi = np.array([[1.0, 0.0]])
    coefficients = np.array([[1.0], [0.0]])
    assert_array_equal(step_errors(detailed, coefficients, psi, 0.25), [0.0, 1.0])


def test_error_record_aggregate():
    record = ErrorRecord(scheme=Scheme.FROZEN, N=5, M=9, errors={1.2: 0.1, 1.7: 0.3})
    assert record.aggregate().max_error == 0.3
    assert ErrorRecord(scheme=Scheme.UNFROZEN, N=5, M=9).aggregate().max_error is None


def test_field_dump(tmp_path, small_grid):
    field = project_initial(small_grid, initial_datum)
    path = write_field(tmp_path / "u.txt", field)
    assert path.read_text().splitlines()[0] == "# 16 8 2.0 1.0"
    loaded = read_field(path)
    assert loaded.grid == small_grid
    assert_array_equal(loaded.values, field.values)


def test_field_dump_errors(tmp_path):
    with pytest.raises(ArtifactError):
        read_field(tmp_path / "missing.txt")
    bad = tmp_path / "bad.txt"
    bad.write_text("# 4\n1\n2\n")
    with pytest.raises(ArtifactError):
        read_field(bad)


def test_trajectory_directory(tmp_path, tiny_grid):
    fields = [project_initial(tiny_grid, lambda x1, x2, k=k: k * x1 + x2) for k in range(4)]
    manifest = TrajectoryManifest(scheme="frozen", mu=1.5, steps=3, dt=0.1, nx=8, ny=4, lx=2.0, ly=1.0)
    save_trajectory(tmp_path / "traj", fields, manifest, frames=[3, 0])
    loaded_manifest, loaded = load_trajectory(tmp_path / "traj")
    assert loaded_manifest.frames == [0, 3]
    assert_array_equal(loaded[1].values, fields[3].values)
    with pytest.raises(ArtifactError):
        load_trajectory(tmp_path / "nothing")


def test_svg_output_is_deterministic(tmp_path, small_grid):
    field = project_initial(small_grid, initial_datum)
    first = render_field_svg(field, tmp_path / "a.svg", title="u0")
    second = render_field_svg(field, tmp_path / "b.svg", title="u0")
    assert first.read_bytes() == second.read_bytes()
    records = [
        ErrorRecord(scheme=Scheme.FROZEN, N=2, M=4, max_error=1e-3),
        ErrorRecord(scheme=Scheme.UNFROZEN, N=2, M=4, max_error=1e-1),
    ]
    plot = render_error_plot(iter(records), tmp_path / "errors.svg")
    assert plot.read_text().lstrip().startswith("<?xml")


def test_detailed_run_single_step(tmp_path):
    service = StudyService(build_config("smoke", {"steps": 1, "t_end": 0.003}))
    paths = service.run_detailed(1.5, tmp_path / "detailed")
    manifest, frames = load_trajectory(paths["frozen"])
    assert manifest.frames == [0, 1]
    assert len(manifest.algs) == 1 and len(manifest.gs) == 2
    assert len(frames) == 2
    assert sorted(p.name for p in paths["unfrozen"].glob("v_*.txt")) == ["v_0000.txt", "v_0001.txt"]
    assert paths["frozen_svg"].is_file()
    assert paths["initial_svg"].read_text().lstrip().startswith("<?xml")


def test_detailed_linear_run_translates(tmp_path):
    service = StudyService(build_config("smoke"))
    paths = service.run_detailed(1.0, tmp_path / "detailed")
    manifest, frames = load_trajectory(paths["frozen"])
    assert manifest.gs[-1] == pytest.approx([0.06, 0.06], rel=1e-10)
    assert_allclose(frames[-1].values, frames[0].values, atol=1e-12)


def test_offline_artifacts(smoke_model):
    service, root, _ = smoke_model
    model = root / "model"
    names = {p.name for p in model.iterdir()}
    assert {"manifest.json", "basis_frozen.npy", "basis_unfrozen.npy", "greedy_frozen.csv", "greedy_unfrozen.csv"} <= names
    assert {"ei_frozen_q.npy", "ei_frozen_xi.npy", "ei_frozen_interp_matrix.npy", "ei_frozen_q_prime.npy"} <= names
    manifest = ModelStore(model).load_manifest()
    assert manifest.n_max == {Scheme.FROZEN: 2, Scheme.UNFROZEN: 2}
    assert manifest.m_max == {Scheme.FROZEN: 4, Scheme.UNFROZEN: 4}
    for scheme in Scheme:
        errors = manifest.traces[scheme].pod_errors
        assert all(b <= a for a, b in zip(errors, errors[1:]))
        rb, ei = ModelStore(model).load(scheme)
        assert rb.size == 2 and ei.size == 4
        assert len(ei.q_prime) <= 5 * ei.size
    with (model / "greedy_frozen.csv").open() as f:
        rows = list(csv.DictReader(f))
    assert [int(r["size"]) for r in rows] == [0, 1, 2]
    assert ModelStore(model).config() == service.config


def test_offline_rerun_has_identical_hashes(smoke_model, tmp_path):
    service, root, _ = smoke_model
    service.run_offline(tmp_path / "model")
    first = json.loads((root / "model" / "manifest.json").read_text())["hashes"]
    second = json.loads((tmp_path / "model" / "manifest.json").read_text())["hashes"]
    assert first == second


def test_study_outputs(smoke_model):
    service, root, records = smoke_model
    assert {(r.scheme, r.N) for r in records} == {(Scheme.FROZEN, 2), (Scheme.UNFROZEN, 2)}
    for record in records:
        assert len(record.errors) == 5
        assert record.max_error is not None and record.max_error >= 0
    lines = (root / "study" / "study.csv").read_text().splitlines()
    assert lines[0].startswith("# error metric: max over time steps")
    assert lines[1] == f"# seed: {service.config.seed}"
    assert lines[2] == "scheme,N,M,max_error,worst_mu,test_count,note"
    assert len(lines) == 5
    with (root / "study" / "study_steps.csv").open() as f:
        steps = list(csv.DictReader(f))
    assert len(steps) == 2 * 5 * 21
    assert (root / "study" / "error_plot.svg").is_file()


def test_study_rerun_is_byte_identical(smoke_model, tmp_path):
    service, root, _ = smoke_model
    service.run_study(root / "model", tmp_path / "study")
    for name in ("study.csv", "study_steps.csv"):
        assert (tmp_path / "study" / name).read_bytes() == (root / "study" / name).read_bytes()


def test_study_reports_missing_sizes(smoke_model, tmp_path):
    _, root, _ = smoke_model
    service = StudyService(build_config("smoke", {"n_sweep": (2, 3)}))
    records = service.run_study(root / "model", tmp_path / "study")
    missing = [r for r in records if r.N == 3]
    assert len(missing) == 2
    assert all(r.max_error is None and "model provides" in r.note for r in missing)
    assert all(r.max_error is not None for r in records if r.N == 2)


def test_online_run(smoke_model, tmp_path):
    service, root, _ = smoke_model
    summary = service.run_online(root / "model", 1.5, 2, 4, tmp_path / "online")
    assert (summary["N"], summary["M"]) == (2, 4)
    assert summary["L"] <= 20
    lines = (tmp_path / "online" / "online_steps.txt").read_text().splitlines()
    assert lines[0] == "# k alg_1 alg_2 g_1 g_2 norm_c"
    assert len(lines) == 21
    assert (tmp_path / "online" / "reduced_frozen.svg").is_file()
    assert (tmp_path / "online" / "reduced_reconstructed.svg").is_file()
    manifest, _ = load_trajectory(tmp_path / "online" / "reduced_frozen")
    assert manifest.scheme == "reduced_frozen"
    with pytest.raises(FrozenRBError):
        service.run_online(root / "model", 1.5, 3, None, tmp_path / "too_big")


def test_online_unfrozen_run(smoke_model, tmp_path):
    service, root, _ = smoke_model
    out = tmp_path / "online"
    summary = service.run_online(root / "model", 1.5, 2, 4, out, Scheme.UNFROZEN)
    assert (summary["N"], summary["M"]) == (2, 4)
    assert np.isfinite(summary["max_error"])
    manifest, frames = load_trajectory(out / "reduced_unfrozen")
    assert manifest.scheme == "reduced_unfrozen"
    assert manifest.gs == [[0.0, 0.0]] * 21
    assert len(frames) == 3
    assert (out / "reduced_unfrozen.svg").is_file()
    assert not (out / "reduced_reconstructed.svg").exists()
    rows = [line.split() for line in (out / "online_steps.txt").read_text().splitlines()[1:]]
    assert all(float(value) == 0.0 for row in rows for value in row[1:5])
    assert summary["max_error"] >= summary["final_error"] >= 0.0


def test_tampered_model_is_rejected(smoke_model, tmp_path):
    service, _, _ = smoke_model
    model = service.run_offline(tmp_path / "model")
    np.save(model / "basis_frozen.npy", np.zeros((2, service.grid.size)))
    with pytest.raises(ArtifactError):
        ModelStore(model).load(Scheme.FROZEN)
    with pytest.raises(ArtifactError):
        ModelStore(tmp_path / "empty").load_manifest()


def test_inconsistent_restricted_dofs_are_rejected(smoke_model, tmp_path):
    service, root, _ = smoke_model
    store = ModelStore(root / "model")
    bases, eis = {}, {}
    for scheme in Scheme:
        bases[scheme], eis[scheme] = store.load(scheme)
    ei = eis[Scheme.FROZEN]
    eis[Scheme.FROZEN] = EIData(ei.grid, ei.q, ei.xi, ei.interp_matrix, ei.q_prime[:-1], ei.errors)
    bad = ModelStore(tmp_path / "bad")
    bad.save(service.config, bases, eis)
    with pytest.raises(ArtifactError):
        bad.load(Scheme.FROZEN)
    rb, _ = bad.load(Scheme.UNFROZEN)
    assert rb.size == 2


def test_cli_exit_codes(tmp_path):
    out = tmp_path / "out"
    assert main(["--preset", "no-such-preset", "offline"]) == 2
    assert main(["--preset", "smoke", "--out", str(out), "study", "--model", str(tmp_path / "missing")]) == 1
    assert main(["--preset", "smoke", "--out", str(out), "offline"]) == 0
    assert (out / "model" / "manifest.json").is_file()
    assert main(["--preset", "smoke", "--out", str(out), "online", "--mu", "1.2"]) == 0
    assert (out / "online_frozen_mu1.2_N2" / "online_steps.txt").is_file()
    assert main(["--preset", "smoke", "--out", str(out), "online", "--mu", "1.2", "--scheme", "unfrozen"]) == 0
    assert (out / "online_unfrozen_mu1.2_N2" / "reduced_unfrozen.svg").is_file()
    assert main(["--preset", "smoke", "--out", str(out), "simulate", "--mu", "1.5"]) == 0
    assert (out / "detailed_mu1.5" / "frozen" / "manifest.json").is_file()


def _acceptance(preset, tmp_path, workers=4):
    service = StudyService(build_config(preset, {"output_dir": tmp_path}), workers=workers)
    service.run_offline(tmp_path / "model")
    manifest = ModelStore(tmp_path / "model").load_manifest()
    errors = manifest.traces[Scheme.FROZEN].pod_errors
    assert all(b <= a for a, b in zip(errors, errors[1:]))
    records = service.run_study(tmp_path / "model", tmp_path / "study")
    return {(r.scheme, r.N): r.max_error for r in records}


@pytest.mark.slow
def test_frozen_beats_unfrozen_at_preset_scale(tmp_path):
    errors = _acceptance("paper-burgers", tmp_path)
    for n in (5, 10, 15, 20):
        assert errors[(Scheme.FROZEN, n)] < errors[(Scheme.UNFROZEN, n)]
    assert errors[(Scheme.FROZEN, 20)] * 30 <= errors[(Scheme.UNFROZEN, 20)]
    frozen = [errors[(Scheme.FROZEN, n)] for n in (5, 10, 15, 20)]
    assert all(b <= 2 * a for a, b in zip(frozen, frozen[1:]))


@pytest.mark.slow
def test_frozen_beats_unfrozen_at_half_resolution(tmp_path):
    errors = _acceptance("paper-burgers-half", tmp_path)
    for n in (5, 10, 15, 20):
        assert errors[(Scheme.FROZEN, n)] < errors[(Scheme.UNFROZEN, n)]
