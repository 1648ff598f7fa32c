import numpy as np
import pandas as pd
import pytest

from models.report import EvalReport
from models.scene import make_scene
from services.metrics_service import (available_horizons, build_report, collision_rate, compare, evaluate,
                                      horizon_step, load_report, plot_series_csv, report_to_json,
                                      rmse_by_horizon)
from services.student_service import constant_velocity_predict


def _truth(scenes):
    return {s.scene_id: s.future() for s in scenes}


def _crossing_in_history_scene(n_agents=2):
    """前 15 帧所有智能体重合，之后彼此相距 10 m 静止"""
    positions = np.zeros((n_agents, 40, 2))
    for k in range(n_agents):
        positions[k, 15:, 0] = 10.0 * k
    return make_scene('hist', 'external', 0.2, 15, positions)


def test_perfect_predictions(line_scene):
    scenes = [line_scene([[0.0, 0.0], [-20.0, 3.5]], [[10.0, 0.0], [12.0, 0.0]], scene_id=f's{k}')
              for k in range(3)]
    report = build_report('truth', _truth(scenes), scenes, 2.0)
    assert report.rmse_by_horizon == {'1s': 0.0, '2s': 0.0, '3s': 0.0, '4s': 0.0, '5s': 0.0}
    assert report.collision_rate == 0.0
    assert report.scene_count == 3 and report.trajectory_count == 6


def test_constant_offset_gives_joint_euclidean_error(line_scene):
    scenes = [line_scene([[0.0, 0.0]], [[10.0, 0.0]])]
    shifted = {s.scene_id: s.future() + np.array([3.0, 4.0]) for s in scenes}
    for value in rmse_by_horizon(shifted, scenes).values():
        assert value == pytest.approx(5.0)


def test_collisions_counted_in_predicted_frames_only():
    scene = _crossing_in_history_scene()
    assert collision_rate(_truth([scene]), [scene], 2.0) == 0.0

    pred = scene.future().copy()
    pred[1, 7] = pred[0, 7]
    assert collision_rate({scene.scene_id: pred}, [scene], 2.0) == 100.0


def test_collision_rate_counts_trajectories():
    scene = _crossing_in_history_scene(3)
    pred = scene.future().copy()
    pred[1, 3] = pred[0, 3]
    assert collision_rate({scene.scene_id: pred}, [scene], 2.0) == pytest.approx(200.0 / 3.0)


def test_missing_or_misshapen_prediction_rejected(line_scene):
    scene = line_scene([[0.0, 0.0]], [[1.0, 0.0]])
    with pytest.raises(ValueError):
        collision_rate({}, [scene], 2.0)
    with pytest.raises(ValueError):
        rmse_by_horizon({scene.scene_id: np.zeros((1, 24, 2))}, [scene])


def test_horizon_steps(line_scene):
    scene = line_scene([[0.0, 0.0]], [[1.0, 0.0]])
    assert [horizon_step(scene, h) for h in (1, 2, 5)] == [5, 10, 25]
    with pytest.raises(ValueError):
        horizon_step(scene, 0.3)
    with pytest.raises(ValueError):
        horizon_step(scene, 6)
    short = line_scene([[0.0, 0.0]], [[1.0, 0.0]], t_p=20)
    assert available_horizons([scene, short]) == [1]


def test_evaluate_constant_velocity_on_straight_lines(line_scene):
    scenes = [line_scene([[0.0, 0.0], [-30.0, 0.0]], [[10.0, 0.0], [10.0, 0.0]], scene_id=f'cv{k}')
              for k in range(4)]
    report = evaluate(constant_velocity_predict, scenes, 2.0, name='cv')
    assert report.name == 'cv'
    assert all(v < 1e-9 for v in report.rmse_by_horizon.values())
    assert report.per_scenario['external']['scenes'] == 4
    assert report.per_scenario['external']['trajectories'] == 8


def _report(name, rate, rmse):
    return EvalReport(name=name, collision_rate=rate, rmse_by_horizon={'1s': rmse}, scene_count=1,
                      trajectory_count=2)


def test_compare_relative_change():
    table = compare({'base': _report('base', 10.0, 2.0), 'model': _report('model', 5.0, 1.0)})
    assert list(table.columns) == ['base', 'model', 'model Δ%']
    assert table.loc['collision_rate', 'model Δ%'] == pytest.approx(-50.0)
    assert table.loc['rmse_1s', 'model Δ%'] == pytest.approx(-50.0)


def test_compare_zero_baseline():
    table = compare({'a': _report('a', 0.0, 1.0), 'b': _report('b', 0.0, 1.0), 'c': _report('c', 50.0, 1.0)},
                    baseline='a')
    assert table.loc['collision_rate', 'b Δ%'] == 0.0
    assert np.isnan(table.loc['collision_rate', 'c Δ%'])


def test_compare_needs_two_reports_and_known_baseline():
    with pytest.raises(ValueError):
        compare({'a': _report('a', 0.0, 1.0)})
    with pytest.raises(ValueError):
        compare({'a': _report('a', 0.0, 1.0), 'b': _report('b', 0.0, 1.0)}, baseline='x')


def test_report_json_round_trip(tmp_path):
    report = EvalReport(name='m', collision_rate=12.5, rmse_by_horizon={'1s': 0.5, '2s': 1.25}, scene_count=4,
                        trajectory_count=8, per_scenario={'following': {'collision_rate': 0.0, 'scenes': 4}})
    path = tmp_path / 'nested' / 'report.json'
    report_to_json(report, str(path))
    assert load_report(str(path)) == report


def test_report_validation(tmp_path):
    with pytest.raises(ValueError):
        _report('bad', 120.0, 1.0)
    with pytest.raises(ValueError):
        EvalReport.from_json({'name': 'x'})
    with pytest.raises(FileNotFoundError):
        load_report(str(tmp_path / 'missing.json'))


def test_plot_series_csv(tmp_path):
    report = EvalReport(name='m', collision_rate=25.0, rmse_by_horizon={'1s': 0.5, '2s': 1.0}, scene_count=2,
                        trajectory_count=4, per_scenario={'aggressive': {'collision_rate': 50.0},
                                                          'following': {'collision_rate': 0.0}})
    paths = plot_series_csv(report, str(tmp_path))
    rmse = pd.read_csv(paths['rmse'])
    assert rmse['horizon'].tolist() == ['1s', '2s']
    assert rmse['rmse'].tolist() == [0.5, 1.0]
    collision = pd.read_csv(paths['collision'])
    assert collision.set_index('scenario')['collision_rate'].to_dict() == {'aggressive': 50.0, 'following': 0.0}
