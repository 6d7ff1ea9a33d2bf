import pytest

import fedalc
import fedalc.config
import fedalc.settings
from fedalc.err import (
    ConfigError,
)

SYNTHETIC = """
# small synthetic run
algorithm = fedaws
rounds = 3
lambda = 2.5
k_mine = 3
server_reg = full
label_privacy = yes
synthetic = true
synth_labels = 6
synth_features = 20
synth_instances = 50
synth_clusters = 2
test_frac = 0.2
out_dim = 4
"""


def test_parse_config():
    run_config = fedalc.config.parse_config(SYNTHETIC)
    cfg = run_config.train
    assert cfg.algorithm == 'fedaws'
    assert cfg.rounds == 3
    assert cfg.hp.lam == 2.5
    assert cfg.hp.k_mine == 3
    assert cfg.server_reg == 'full'
    assert cfg.label_privacy is True
    assert cfg.client_lr == fedalc.settings.CLIENT_LR
    assert run_config.dims == {'out': 4}
    dims = run_config.model_dims(20)
    assert (dims.features, dims.out, dims.embed) == (
        20, 4, fedalc.settings.EMBED_DIM)
    assert run_config.values['synth_labels'] == 6


def test_parse_config_reports_every_problem():
    text = (
        "algorithm = fedsgd\n"
        "rounds = many\n"
        "colour = blue\n"
        "client_lr = 0\n"
        "nu = 5\n"
        "rounds = 4\n"
        "just a line\n"
        "embed_dim = 0\n"
        "synth_labels = 4\n")
    with pytest.raises(ConfigError) as info:
        fedalc.config.parse_config(text)
    problems = info.value.problems
    joined = '\n'.join(problems)
    assert 'fedsgd' in joined
    assert "rounds: cannot parse 'many'" in joined
    assert "unknown key 'colour'" in joined
    assert 'client_lr must be > 0' in joined
    assert 'nu must be in' in joined
    assert "line 6: duplicate key 'rounds'" in joined
    assert 'line 7' in joined
    assert 'embed dimension' in joined
    assert 'synth_* keys need synthetic = true' in joined
    assert 'either train' in joined
    assert fedalc.err.CHECK_CONFIG in str(info.value)


def test_parse_config_data_files(tmp_path, xmlc_file):
    run_config = fedalc.config.parse_config(
        f"train = {xmlc_file.name}\nval_frac = 0.5\n", str(tmp_path))
    assert run_config.path('train') == str(xmlc_file)
    assert run_config.path('test') is None
    with pytest.raises(ConfigError) as info:
        fedalc.config.parse_config(
            "train = data.txt\ntest = missing.txt\nval_frac = 1.5\n",
            str(tmp_path))
    assert len(info.value.problems) == 2
    with pytest.raises(ConfigError):
        fedalc.config.parse_config(
            "synthetic = true\ntrain = data.txt\n", str(tmp_path))


@pytest.mark.parametrize('word, value', [
    ('true', True), ('On', True), ('1', True),
    ('no', False), ('OFF', False), ('0', False),
])
def test_parse_bool(word, value):
    assert fedalc.config.parse_bool(word) is value


def test_parse_bool_rejects():
    with pytest.raises(ValueError):
        fedalc.config.parse_bool('maybe')


def test_load_config_resolves_relative_paths(tmp_path, xmlc_file):
    config = tmp_path / 'run.conf'
    config.write_text(f"train = {xmlc_file.name}\ntest = {xmlc_file.name}\n")
    run_config = fedalc.config.load_config(config)
    train, val, test, checksums = fedalc.config.load_datasets(run_config)
    assert len(train) == 2
    assert val is None
    assert len(test) == 2
    assert set(checksums) == {str(xmlc_file)}


def test_load_datasets_synthetic():
    run_config = fedalc.config.parse_config(SYNTHETIC)
    train, val, test, checksums = fedalc.config.load_datasets(run_config)
    # floor(0.2 * 50) test, then floor(0.05 * 40) validation
    assert (len(train), len(val), len(test)) == (38, 2, 10)
    assert train.C == 6
    again = fedalc.config.load_datasets(run_config)
    assert again[3] == checksums
    assert len(checksums['synthetic']) == 64


def test_load_datasets_rejects_mismatched_files(tmp_path, xmlc_file):
    other = tmp_path / 'other.txt'
    other.write_text("1 9 3\n0 1:1.0\n")
    run_config = fedalc.config.parse_config(
        f"train = {xmlc_file.name}\nval = other.txt\n", str(tmp_path))
    with pytest.raises(ValueError):
        fedalc.config.load_datasets(run_config)


def test_synth_noise_key():
    quiet = fedalc.config.parse_config(SYNTHETIC + "synth_noise = 0\n")
    assert quiet.values['synth_noise'] == 0.0
    noisy = fedalc.config.load_datasets(
        fedalc.config.parse_config(SYNTHETIC))[3]
    assert fedalc.config.load_datasets(quiet)[3] != noisy
