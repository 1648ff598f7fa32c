import json

import numpy as np
import pandas as pd
import pytest

from config.settings import RunConfig
from models.mixture import mixture_to_json
from scheduler.pool import map_scenes
from scheduler.task_runner import load_manifest, rerun_options, responsibility_shift, run_pipeline_task
from services.gaussian_service import responsibilities
from services.metrics_service import collision_rate, rmse_by_horizon
from services.scene_service import split_dataset
from services.simulator_service import generate_dataset
from services.student_service import constant_velocity_predict, predict, train_student
from services.teacher_service import extract_pattern, train_teacher


def test_map_scenes_keeps_input_order():
    items = list(range(50))
    assert map_scenes(lambda x: x * x, items, max_workers=8) == [x * x for x in items]
    assert map_scenes(lambda x: x + 1, items, max_workers=1) == [x + 1 for x in items]
    assert map_scenes(lambda x: x, []) == []


def test_responsibility_shift():
    assert not responsibility_shift(np.array([[0.9, 0.1], [0.85, 0.15]]))
    assert responsibility_shift(np.array([[0.6, 0.4], [0.4, 0.6]]))
    assert responsibility_shift(np.array([[0.9, 0.1], [0.7, 0.3]]))


def test_unknown_command_and_missing_option(tmp_path):
    result = run_pipeline_task('bogus', {'out': str(tmp_path)}, RunConfig())
    assert not result['success'] and result['exit_code'] == 1

    result = run_pipeline_task('train-teacher', {'out': str(tmp_path)}, RunConfig())
    assert result['exit_code'] == 1
    assert '--data' in result['message']


def test_missing_dataset_is_validation_failure(tmp_path):
    result = run_pipeline_task('train-teacher', {'out': str(tmp_path), 'data': str(tmp_path / 'none.jsonl')},
                               RunConfig())
    assert result['exit_code'] == 1
    assert 'none.jsonl' in result['message']


def test_manifest_round_trip(tmp_path):
    cfg = RunConfig(scenes_per_kind=1, agents_max=2)
    result = run_pipeline_task('simulate', {'out': str(tmp_path)}, cfg)
    assert result['success']
    manifest = load_manifest(str(tmp_path / 'manifest.json'))
    assert manifest['config']['agents_max'] == 2
    assert rerun_options(manifest, '/elsewhere') == {'out': '/elsewhere'}
    assert rerun_options(manifest) == {'out': str(tmp_path)}


def test_manifest_missing_fields(tmp_path):
    path = tmp_path / 'manifest.json'
    path.write_text('{"command": "simulate"}')
    with pytest.raises(ValueError):
        load_manifest(str(path))


@pytest.mark.slow
def test_ablation_harness(tmp_path):
    from scripts.run_ablation import main

    overrides = ['scenes_per_kind=2', 'agents_max=3', 'd_z=4', 'm_q=2', 'm_p=2', 'vgae_hidden=8',
                 'enc_hidden=8', 'dec_hidden=8', 'conv_channels=4', 'teacher_epochs=1', 'student_epochs=1',
                 'batch_size=4', 'k_inner=2', 'em_max_iters=20']
    argv = ['--out', str(tmp_path), '--seeds', '7', '--only', 'feature']
    for item in overrides:
        argv += ['--set', item]
    assert main(argv) == 0
    mean = pd.read_csv(tmp_path / 'ablation_mean.csv', index_col=0)
    assert list(mean.columns) == ['no-matching', 'feature', 'feature Δ%']
    assert 'collision_rate' in mean.index


def test_numeric_failure_exits_with_runtime_code(tmp_path, make_mixture, monkeypatch):
    import scheduler.task_runner as runner

    def diverge(*args, **kwargs):
        raise FloatingPointError('第 3 次迭代上界非有限: nan')

    path = tmp_path / 'mixture.json'
    path.write_text(json.dumps(mixture_to_json(make_mixture([1.0], [[0.0]], [[1.0]]))))
    monkeypatch.setattr(runner, 'cpm_solve', diverge)
    result = run_pipeline_task('cpm-solve', {'out': str(tmp_path / 'out'), 'p': str(path), 'q': str(path)},
                               RunConfig())
    assert not result['success']
    assert result['exit_code'] == 2
    assert '非有限' in result['message']


def _of_kind(scenes, *kinds):
    return [s for s in scenes if s.scenario_kind.value in kinds]


@pytest.fixture(scope='module', params=[7, 8, 9])
def trained_run(request):
    """每个种子训练一次教师、CPM 学生和 gamma=0 的学生，供下面的方向性检验共用"""
    config = RunConfig(scenes_per_kind=24, seed=request.param)
    dataset = split_dataset(generate_dataset(config), config.split_ratio, config.seed)
    teacher = train_teacher(dataset, config)
    matched = train_student(dataset, teacher, config)
    ablated = train_student(dataset, teacher, config.replace(gamma=0.0))
    return config, dataset, teacher, matched, ablated


@pytest.mark.slow
def test_matching_lowers_collisions_in_conflict_scenes(trained_run):
    config, dataset, _, matched, ablated = trained_run
    scenes = _of_kind(dataset.test_scenes(), 'intersection', 'aggressive')
    assert scenes
    matched_rate = collision_rate({s.scene_id: predict(matched, s) for s in scenes}, scenes, config.d_col)
    ablated_rate = collision_rate({s.scene_id: predict(ablated, s) for s in scenes}, scenes, config.d_col)
    assert matched_rate < ablated_rate


@pytest.mark.slow
def test_student_beats_constant_velocity_at_longer_horizons(trained_run):
    _, dataset, _, matched, _ = trained_run
    scenes = _of_kind(dataset.test_scenes(), 'overtaking', 'intersection')
    assert scenes
    student = rmse_by_horizon({s.scene_id: predict(matched, s) for s in scenes}, scenes)
    cv = rmse_by_horizon({s.scene_id: constant_velocity_predict(s) for s in scenes}, scenes)
    for horizon in ('2s', '3s', '4s', '5s'):
        assert student[horizon] < cv[horizon], horizon


@pytest.mark.slow
def test_teacher_responsibilities_shift_in_aggressive_scenes(trained_run):
    _, dataset, teacher, _, _ = trained_run

    def shifted_share(kind):
        scenes = _of_kind(dataset.test_scenes(), kind)
        assert scenes
        flags = [responsibility_shift(responsibilities(teacher.q_mixture, np.array(extract_pattern(teacher, s))))
                 for s in scenes]
        return sum(flags) / len(flags)

    assert shifted_share('aggressive') >= 0.8
    assert shifted_share('following') < 0.5
