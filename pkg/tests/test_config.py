import os
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
import yaml

from privclust.config_wrapper import DEFAULT_OUTPUT_ROOT, OUTPUT_ROOT_ENV
from privclust.errors import ConfigError, StateError
from privclust.runner import ExperimentRunner
from privclust.utils import load_config, rich_as_completed


@pytest.fixture
def config_file(tmp_path, blob_config):
    path = tmp_path / "blobs.yaml"
    path.write_text(yaml.safe_dump(blob_config), encoding="utf-8")
    return str(path)


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(str(tmp_path / "missing.yaml"))

    listing = tmp_path / "list.yaml"
    listing.write_text("- 1\n- 2\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="mapping"):
        load_config(str(listing))

    broken = tmp_path / "broken.yaml"
    broken.write_text("name: [unclosed\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(str(broken))


def test_from_yaml_checks_extension(tmp_path, blob_config):
    path = tmp_path / "blobs.json"
    path.write_text(yaml.safe_dump(blob_config), encoding="utf-8")
    with pytest.raises(ConfigError, match="YAML"):
        ExperimentRunner.from_yaml(str(path))


def test_from_yaml_applies_overrides(config_file, console):
    runner = ExperimentRunner.from_yaml(config_file, seed=7, max_threads=3, console=console)
    assert runner.seeds == [7]
    assert runner.max_threads == 3
    assert runner.base_name == config_file.rsplit(".", 1)[0]


def test_invalid_config_names_the_field(blob_config, console):
    blob_config["epsilons"] = [1.0, -2.0]
    with pytest.raises(ConfigError, match="epsilons"):
        ExperimentRunner(blob_config, console=console)

    blob_config["epsilons"] = []
    with pytest.raises(ConfigError):
        ExperimentRunner(blob_config, console=console)


def test_unknown_keys_are_rejected(blob_config, console):
    blob_config["epsilon"] = [1.0]
    with pytest.raises(ConfigError, match="epsilon"):
        ExperimentRunner(blob_config, console=console)


def test_hash_ignores_output_location(blob_config, console, tmp_path):
    a = ExperimentRunner(blob_config, console=console)
    blob_config["output_dir"] = str(tmp_path / "elsewhere")
    b = ExperimentRunner(blob_config, console=console)
    assert a.hash == b.hash
    blob_config["workers"] = 7
    assert ExperimentRunner(blob_config, console=console).hash == a.hash
    blob_config["epsilons"] = [2.0]
    assert ExperimentRunner(blob_config, console=console).hash != a.hash


def test_output_root_precedence(blob_config, console, monkeypatch, tmp_path):
    monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path / "from_env"))
    assert ExperimentRunner(blob_config, output_root="cli", console=console).output_root == "cli"
    assert ExperimentRunner(blob_config, console=console).output_root == blob_config["output_dir"]

    del blob_config["output_dir"]
    assert ExperimentRunner(blob_config, console=console).output_root == str(tmp_path / "from_env")
    monkeypatch.delenv(OUTPUT_ROOT_ENV)
    assert ExperimentRunner(blob_config, console=console).output_root == DEFAULT_OUTPUT_ROOT


def test_run_dir_names_config_and_seeds(blob_config, console):
    runner = ExperimentRunner(blob_config, console=console)
    expected = os.path.join(
        blob_config["output_dir"], f"blobs_test-{runner.hash[:12]}-seed0", "simulate"
    )
    assert runner.run_dir("simulate") == expected

    blob_config["seeds"] = [0, 1, 2]
    runner = ExperimentRunner(blob_config, console=console)
    assert os.path.basename(os.path.dirname(runner.run_dir("attack"))).endswith("-seeds0-2")


def test_prepare_output_refuses_existing_directory(blob_config, console):
    runner = ExperimentRunner(blob_config, console=console)
    out = runner.prepare_output("attack")
    assert os.path.isdir(out)
    with pytest.raises(StateError):
        runner.prepare_output("attack")


def test_grid_drops_duplicate_points(blob_config, console):
    blob_config["epsilons"] = [1.0, 1.0, 5.0]
    blob_config["seeds"] = [0, 1]
    runner = ExperimentRunner(blob_config, console=console)
    assert runner.grid() == [(1.0, 0.5, 0), (1.0, 0.5, 1), (5.0, 0.5, 0), (5.0, 0.5, 1)]


def test_syntax_check(blob_config, console):
    runner = ExperimentRunner(blob_config, console=console)
    runner.syntax_check()
    assert len(runner.population) == 240
    assert "Syntax check passed" in console.file.getvalue()

    blob_config["shared_fractions"] = [0.001]
    with pytest.raises(ConfigError, match="would share none"):
        ExperimentRunner(blob_config, console=console).syntax_check()


def test_gap_clusters(blob_config, console):
    runner = ExperimentRunner(blob_config, console=console)
    population = runner.load()
    assert runner.gap_clusters(population) == (0, 1)
    with pytest.raises(ConfigError):
        runner.gap_clusters(population.without_labels())

    blob_config["gapviz"] = {"clusters": [0, 9]}
    with pytest.raises(ConfigError, match="not labels"):
        ExperimentRunner(blob_config, console=console).gap_clusters(population)

    blob_config["gapviz"] = {"clusters": [2, 2]}
    with pytest.raises(ConfigError, match="different"):
        ExperimentRunner(blob_config, console=console).gap_clusters(population)


@pytest.mark.parametrize("name", ["seven_blobs", "two_blobs_gap", "attack_cloud"])
def test_bundled_configs_validate(name, console):
    path = os.path.join(os.path.dirname(__file__), "..", "configs", f"{name}.yaml")
    runner = ExperimentRunner.from_yaml(path, console=console)
    assert runner.experiment.name == name
    assert runner.grid()


def test_standardize_applies_to_the_population(blob_config, console):
    blob_config["standardize"] = True
    population = ExperimentRunner(blob_config, console=console).load()
    assert np.allclose(population.rows.mean(axis=0), 0.0, atol=1e-12)
    assert np.allclose(population.rows.std(axis=0), 1.0)


def test_rich_as_completed_keeps_submission_order(console):
    def slow(i):
        time.sleep(0.01 * (4 - i))
        return i

    with ThreadPoolExecutor(max_workers=4) as executor:
        futures = [executor.submit(slow, i) for i in range(4)]
        assert rich_as_completed(futures, desc="waiting", console=console) == [0, 1, 2, 3]
    assert "4/4" in console.file.getvalue()
