import pytest

from gossipmask.cli import (ConfigError, main, parse_config, render_config,
                            run_experiment)

SMALL_TRAIN = """
# desk-scale smoke config
experiment = train
seed = 3
n = 4
topology = er
p = 0.8
classes = 4
c = 2
per_class = 30
noise = 0.2
dim = 2,5,5
conv_channels = 4
hidden = 16
algorithm = gossip_mask
rounds = 2
batch_size = 8
eval_interval = 1
"""


# ---------------------------------------------------------------- parsing

def test_parse_basic_keys():
    cfg = parse_config("n = 20\np = 0.5\n")
    assert cfg.n == 20 and cfg.p == 0.5


def test_parse_lambda():
    cfg = parse_config("lambda = 0.001\n")
    assert cfg.lam == 0.001


def test_parse_fills_defaults():
    cfg = parse_config("")
    assert cfg.experiment == "train"
    assert cfg.retention_set == (0.1, 0.2, 0.3, 0.4)
    assert cfg.batch_size == 128


def test_parse_unknown_key_line_numbered():
    with pytest.raises(ConfigError, match="line 2: unknown key 'frobnicate'"):
        parse_config("n = 4\nfrobnicate = 1\n")


def test_parse_type_mismatch_line_numbered():
    with pytest.raises(ConfigError, match="line 1.*rounds"):
        parse_config("rounds = soon\n")


def test_parse_duplicate_key():
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config("n = 4\nn = 5\n")


def test_parse_missing_equals():
    with pytest.raises(ConfigError, match="line 1"):
        parse_config("just words\n")


def test_parse_comments_and_blanks():
    cfg = parse_config("# comment\n\nn = 6  # inline\n")
    assert cfg.n == 6


def test_retention_length_mismatch():
    with pytest.raises(ConfigError, match="line 2.*retention"):
        parse_config("n = 20\nretention = 0.4,0.4,0.3\n")


def test_retention_range_checked():
    with pytest.raises(ConfigError, match="retention"):
        parse_config("n = 2\nretention = 0.5,1.5\n")


def test_validation_errors():
    for text, pat in [
        ("experiment = fly\n", "experiment"),
        ("n = 1\n", "agents"),
        ("p = 0\n", "probability"),
        ("c = 11\n", "labels per agent"),
        ("algorithm = magic\n", "unknown algorithm"),
        ("topology = star\n", "topology"),
        ("sweep = 1.5\n", "sweep"),
        ("cifar10 = /no/such/dir\n", "cifar10"),
    ]:
        with pytest.raises(ConfigError, match=pat):
            parse_config(text)


def test_render_round_trips():
    cfg = parse_config(SMALL_TRAIN)
    again = parse_config(render_config(cfg))
    assert again == cfg


# ------------------------------------------------------------- experiments

def test_run_train_outputs(tmp_path):
    cfg = parse_config(SMALL_TRAIN + f"out = {tmp_path/'run'}\n")
    assert run_experiment(cfg, quiet=True) == 0
    out = tmp_path / "run"
    assert (out / "manifest.txt").is_file()
    assert (out / "graph.edges").is_file()
    metrics = (out / "metrics_gossip_mask.csv").read_text().splitlines()
    assert metrics[0] == "round,agent,accuracy,loss,payload_bits,header_bits"
    # rounds 0..2 evaluated at interval 1: 3 rounds x (1 mean + 4 agents)
    assert len(metrics) == 1 + 3 * 5
    sparsity = (out / "sparsity_gossip_mask.csv").read_text().splitlines()
    assert sparsity[0] == "agent,layer,ones,total,density"


def test_metrics_rows_sorted(tmp_path):
    cfg = parse_config(SMALL_TRAIN + f"out = {tmp_path/'run'}\n")
    run_experiment(cfg, quiet=True)
    rows = (tmp_path / "run" / "metrics_gossip_mask.csv").read_text().splitlines()[1:]
    keys = [(int(r.split(",")[0]), int(r.split(",")[1])) for r in rows]
    assert keys == sorted(keys)


def test_rounds_zero_only_initial_rows(tmp_path):
    cfg = parse_config(SMALL_TRAIN.replace("rounds = 2", "rounds = 0")
                       + f"out = {tmp_path/'run'}\n")
    run_experiment(cfg, quiet=True)
    rows = (tmp_path / "run" / "metrics_gossip_mask.csv").read_text().splitlines()[1:]
    assert all(r.split(",")[0] == "0" for r in rows)


def test_rerun_is_byte_identical(tmp_path):
    cfg = parse_config(SMALL_TRAIN + f"out = {tmp_path/'a'}\n")
    run_experiment(cfg, quiet=True)
    from dataclasses import replace
    run_experiment(replace(cfg, out=str(tmp_path / "b")), quiet=True)
    a = (tmp_path / "a" / "metrics_gossip_mask.csv").read_bytes()
    b = (tmp_path / "b" / "metrics_gossip_mask.csv").read_bytes()
    assert a == b


def test_manifest_reproduces_run(tmp_path):
    cfg = parse_config(SMALL_TRAIN + f"out = {tmp_path/'a'}\n")
    run_experiment(cfg, quiet=True)
    manifest = (tmp_path / "a" / "manifest.txt").read_text()
    cfg2 = parse_config(manifest)
    from dataclasses import replace
    run_experiment(replace(cfg2, out=str(tmp_path / "b")), quiet=True)
    assert ((tmp_path / "a" / "metrics_gossip_mask.csv").read_bytes()
            == (tmp_path / "b" / "metrics_gossip_mask.csv").read_bytes())


def test_sweep_writes_one_file_per_topology(tmp_path):
    text = SMALL_TRAIN.replace("experiment = train", "experiment = sweep")
    text = text.replace("rounds = 2", "rounds = 1")
    text += f"out = {tmp_path/'s'}\nsweep = ring,0.5,0.8\n"
    run_experiment(parse_config(text), quiet=True)
    for label in ("ring", "p0.5", "p0.8"):
        assert (tmp_path / "s" / f"metrics_{label}.csv").is_file()
        assert (tmp_path / "s" / f"graph_{label}.edges").is_file()


def test_mask_vs_weight_experiment(tmp_path):
    text = """
experiment = mask_vs_weight
seed = 1
n = 2
classes = 3
c = 2
per_class = 20
noise = 0.2
dim = 1,5,5
conv_channels = 3
hidden = 8
mask_vs_weight_r = 0.5
mask_vs_weight_steps = 6
mask_vs_weight_eval = 3
batch_size = 6
"""
    run_experiment(parse_config(text + f"out = {tmp_path/'d'}\n"), quiet=True)
    rows = (tmp_path / "d" / "mask_vs_weight.csv").read_text().splitlines()
    assert rows[0] == "step,agent,arm,r,accuracy"
    # 2 agents x 2 arms x (6/3 + 1) evaluations
    assert len(rows) == 1 + 2 * 2 * 3


def test_bound_check_experiment(tmp_path):
    text = f"experiment = bound_check\ninstances = 5\nprobes = 20\nout = {tmp_path/'b'}\n"
    run_experiment(parse_config(text), quiet=True)
    rows = (tmp_path / "b" / "bounds.csv").read_text().splitlines()
    assert len(rows) == 6
    assert all(r.split(",")[7] == "1" for r in rows[1:])  # upper bound holds


# ------------------------------------------------------------- entry point

def test_main_exit_codes(tmp_path):
    good = tmp_path / "good.conf"
    good.write_text(SMALL_TRAIN + f"out = {tmp_path/'out'}\n")
    assert main(["run", str(good), "--quiet"]) == 0

    bad = tmp_path / "bad.conf"
    bad.write_text("frobnicate = 1\n")
    assert main(["run", str(bad)]) == 1

    assert main(["run", str(tmp_path / "missing.conf")]) == 1


def test_main_seed_and_out_override(tmp_path):
    conf = tmp_path / "c.conf"
    conf.write_text(SMALL_TRAIN)
    out = tmp_path / "o"
    assert main(["run", str(conf), "--seed", "9", "--out", str(out), "--quiet"]) == 0
    manifest = (out / "manifest.txt").read_text()
    assert "seed = 9" in manifest


def test_main_runtime_error_exit_2(tmp_path, monkeypatch):
    conf = tmp_path / "c.conf"
    conf.write_text(SMALL_TRAIN + f"out = {tmp_path/'out'}\n")
    import gossipmask.cli as cli

    def boom(*args, **kwargs):
        raise RuntimeError("synthetic failure")
    monkeypatch.setattr(cli, "_run_train", boom)
    assert main(["run", str(conf), "--quiet"]) == 2
