import json

import numpy as np
import pandas as pd
import pytest

from cli.commands import run
from models.mixture import mixture_from_json, mixture_to_json

SMALL = ['--set', 'scenes_per_kind=2', '--set', 'agents_max=3', '--set', 'd_z=4', '--set', 'm_q=2',
         '--set', 'm_p=2', '--set', 'vgae_hidden=8', '--set', 'enc_hidden=8', '--set', 'dec_hidden=8',
         '--set', 'conv_channels=4', '--set', 'teacher_epochs=1', '--set', 'student_epochs=1',
         '--set', 'batch_size=4', '--set', 'k_inner=2', '--set', 'em_max_iters=20']


@pytest.fixture
def simulated(tmp_path):
    out = tmp_path / 'data'
    assert run(['simulate', '--out', str(out), *SMALL]) == 0
    return out


@pytest.fixture
def trained_teacher(tmp_path, simulated):
    out = tmp_path / 'teacher'
    assert run(['train-teacher', '--data', str(simulated), '--out', str(out), *SMALL]) == 0
    return out / 'teacher.json'


def test_simulate_writes_dataset_labels_and_manifest(simulated):
    assert sorted(p.name for p in simulated.iterdir()) == ['dataset.jsonl', 'labels.jsonl', 'manifest.json']
    assert len((simulated / 'dataset.jsonl').read_text().splitlines()) == 8
    manifest = json.loads((simulated / 'manifest.json').read_text())
    assert manifest['command'] == 'simulate'
    assert manifest['config']['scenes_per_kind'] == 2
    assert manifest['seeds'] == {'seed': 7}
    assert manifest['artifacts'] == ['dataset.jsonl', 'labels.jsonl']
    assert set(manifest) == {'command', 'options', 'config', 'seeds', 'versions', 'artifacts'}


def test_simulate_labels_match_scenario_contract(simulated):
    labels = [json.loads(line) for line in (simulated / 'labels.jsonl').read_text().splitlines()]
    assert [label['scene_id'] for label in labels][:2] == ['following-0000', 'following-0001']
    for label in labels:
        assert len(label['flags']) >= 2


def test_evaluate_missing_model_exits_with_validation_code(tmp_path, simulated, capsys):
    missing = tmp_path / 'nope' / 'student.json'
    code = run(['evaluate', '--data', str(simulated), '--model', str(missing), '--out', str(tmp_path / 'eval'),
                *SMALL])
    assert code == 1
    assert str(missing) in capsys.readouterr().err


def test_unknown_flag_and_missing_command(capsys):
    assert run(['simulate', '--bogus']) == 1
    assert run([]) == 1
    assert 'usage' in capsys.readouterr().err


def test_help_exits_cleanly(capsys):
    assert run(['--help']) == 0
    assert 'simulate' in capsys.readouterr().out


def test_unknown_config_key(tmp_path):
    assert run(['simulate', '--out', str(tmp_path), '--set', 'not_a_key=1']) == 1
    assert run(['simulate', '--out', str(tmp_path), '--set', 'missing_equals']) == 1


def test_config_file_and_seed_override(tmp_path):
    config = tmp_path / 'run.env'
    config.write_text('scenes_per_kind=1\nagents_max=2\nnoise_std=0\n')
    out = tmp_path / 'sim'
    assert run(['simulate', '--out', str(out), '--config', str(config), '--seed', '11']) == 0
    manifest = json.loads((out / 'manifest.json').read_text())
    assert manifest['config']['seed'] == 11
    assert manifest['config']['noise_std'] == 0.0
    assert len((out / 'dataset.jsonl').read_text().splitlines()) == 4


def test_evaluate_baseline_only(tmp_path, simulated):
    out = tmp_path / 'eval'
    assert run(['evaluate', '--data', str(simulated), '--out', str(out), *SMALL]) == 0
    report = json.loads((out / 'report.json').read_text())
    assert report['name'] == 'cv'
    assert report['scene_count'] == 2
    assert set(report['rmse_by_horizon']) == {'1s', '2s', '3s', '4s', '5s'}
    assert (out / 'rmse_by_horizon.csv').exists()


def test_cpm_solve_on_json_files(tmp_path, make_mixture):
    p_path, q_path = tmp_path / 'p.json', tmp_path / 'q.json'
    p_path.write_text(json.dumps(mixture_to_json(make_mixture([0.5, 0.5], [[0.0], [1.0]], [[2.0], [3.0]]))))
    q_path.write_text(json.dumps(mixture_to_json(make_mixture([0.3, 0.7], [[-2.0], [3.0]], [[0.5], [1.0]]))))
    out = tmp_path / 'cpm'
    assert run(['cpm-solve', '--p', str(p_path), '--q', str(q_path), '--out', str(out),
                '--mc-samples', '5000']) == 0
    report = json.loads((out / 'cpm_report.json').read_text())
    assert np.all(np.diff(report['bound_trace']) <= 1e-9)
    assert report['final_bound'] == report['bound_trace'][-1]
    assert report['mc_kl']['samples'] == 5000
    assert report['mc_kl']['estimate'] <= report['final_bound'] + 3 * report['mc_kl']['standard_error']
    solved = mixture_from_json(json.loads((out / 'solved_p.json').read_text()))
    assert solved.n_components == 2


def test_cpm_solve_rejects_malformed_mixture(tmp_path):
    bad = tmp_path / 'bad.json'
    bad.write_text('{"weights": [0.5, 0.6], "means": [[0.0], [1.0]], "vars": [[1.0], [1.0]]}')
    assert run(['cpm-solve', '--p', str(bad), '--q', str(bad), '--out', str(tmp_path / 'out')]) == 1


def test_rerun_reproduces_artifacts(tmp_path, simulated):
    out = tmp_path / 'again'
    assert run(['rerun', '--manifest', str(simulated / 'manifest.json'), '--out', str(out)]) == 0
    for name in ('dataset.jsonl', 'labels.jsonl'):
        assert (out / name).read_bytes() == (simulated / name).read_bytes()
    first = json.loads((simulated / 'manifest.json').read_text())
    second = json.loads((out / 'manifest.json').read_text())
    assert first['config'] == second['config']


def test_train_teacher_writes_graphs(tmp_path, simulated):
    out = tmp_path / 'teacher'
    assert run(['train-teacher', '--data', str(simulated / 'dataset.jsonl'), '--out', str(out),
                '--dump-graphs', *SMALL]) == 0
    assert (out / 'teacher.json').exists()
    log = pd.read_csv(out / 'teacher_log.csv')
    assert log['epoch'].tolist() == [1]
    # 6 个训练场景 × 15 帧
    assert len((out / 'graphs.jsonl').read_text().splitlines()) == 90


def test_plot_data_responsibilities_sum_to_one(tmp_path, simulated, trained_teacher):
    out = tmp_path / 'plot'
    assert run(['plot-data', '--teacher', str(trained_teacher), '--data', str(simulated), '--split', 'all',
                '--out', str(out), *SMALL]) == 0
    table = pd.read_csv(out / 'responsibilities.csv')
    sums = table.groupby(['scene_id', 'frame'])['weight'].sum()
    assert len(sums) == 8 * 15
    assert np.allclose(sums.to_numpy(), 1.0)
    payload = json.loads((out / 'mixture_weights.json').read_text())
    assert payload['m_q'] == 2
    assert len(payload['scenes']) == 8


def test_convert_csv(tmp_path):
    rows = [{'scene_id': 'a', 'agent_id': agent, 'frame': frame, 'x': frame * 2.0 + agent * 10, 'y': 0.0}
            for agent in (0, 1) for frame in range(1, 41)]
    csv_path = tmp_path / 'tracks.csv'
    pd.DataFrame(rows).to_csv(csv_path, index=False)
    out = tmp_path / 'converted'
    assert run(['convert', '--csv', str(csv_path), '--out', str(out)]) == 0
    record = json.loads((out / 'dataset.jsonl').read_text().splitlines()[0])
    assert record['scene_id'] == 'a'


@pytest.mark.slow
def test_full_pipeline(tmp_path, simulated, trained_teacher):
    student_out = tmp_path / 'student'
    assert run(['train-student', '--data', str(simulated), '--teacher', str(trained_teacher),
                '--out', str(student_out), *SMALL]) == 0
    log = pd.read_csv(student_out / 'training_log.csv')
    assert list(log.columns) == ['epoch', 'l2', 'l1', 'total']

    eval_out = tmp_path / 'eval'
    assert run(['evaluate', '--data', str(simulated), '--model', str(student_out / 'student.json'),
                '--baseline', 'cv', '--out', str(eval_out), *SMALL]) == 0
    assert json.loads((eval_out / 'report.json').read_text())['name'] == 'student'
    assert json.loads((eval_out / 'cv_report.json').read_text())['name'] == 'cv'
    comparison = pd.read_csv(eval_out / 'comparison.csv', index_col=0)
    assert 'cv Δ%' in comparison.columns
