import json

import numpy as np
import pandas as pd
import pytest

from models.scene import Dataset, ScenarioKind, make_scene, scene_to_record
from services.scene_service import (convert_csv, derive_velocities, load_scenes, save_scenes,
                                    split_dataset)


def _write_jsonl(path, records):
    with open(path, 'w', encoding='utf-8') as f:
        for record in records:
            f.write(json.dumps(record) + '\n')


def test_load_single_scene(tmp_path, line_scene):
    scene = line_scene([[0.0, 0.0], [5.0, 1.0]], [[1.0, 0.0], [0.0, 1.0]])
    path = tmp_path / 'one.jsonl'
    _write_jsonl(path, [scene_to_record(scene)])

    ds = load_scenes(str(path))
    assert len(ds.scenes) == 1
    assert ds.scenes[0].n == 2
    assert ds.scenes[0].t_p == 40


def test_load_empty_file(tmp_path):
    path = tmp_path / 'empty.jsonl'
    path.write_text('')
    assert load_scenes(str(path)).scenes == []


def test_load_unequal_track_lengths_rejected(tmp_path, line_scene):
    record = scene_to_record(line_scene([[0.0, 0.0], [5.0, 1.0]], [[1.0, 0.0], [0.0, 1.0]], scene_id='bad'))
    record['tracks'][1]['xy'] = record['tracks'][1]['xy'][:-1]
    path = tmp_path / 'bad.jsonl'
    _write_jsonl(path, [record])
    with pytest.raises(ValueError, match='bad'):
        load_scenes(str(path))


def test_load_malformed_line_names_line_number(tmp_path, line_scene):
    path = tmp_path / 'broken.jsonl'
    path.write_text(json.dumps(scene_to_record(line_scene([[0.0, 0.0]], [[1.0, 0.0]]))) + '\n{not json\n')
    with pytest.raises(ValueError, match='第 2 行'):
        load_scenes(str(path))


def test_load_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_scenes(str(tmp_path / 'nope.jsonl'))


def test_save_load_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    scenes = [make_scene(f's{k}', 'following', 0.2, 15, rng.normal(size=(3, 40, 2)) * 100) for k in range(3)]
    path = tmp_path / 'rt.jsonl'
    save_scenes(Dataset(scenes=scenes), str(path))
    loaded = load_scenes(str(path)).scenes
    assert loaded == scenes
    for a, b in zip(scenes, loaded):
        assert np.array_equal(a.positions(), b.positions())


def test_derive_velocities_examples():
    positions = np.zeros((1, 3, 2))
    positions[0, 1] = [1.0, 0.0]
    positions[0, 2] = [2.0, 0.0]
    scene = make_scene('v', 'external', 0.2, 2, positions)
    assert derive_velocities(scene, 2) == pytest.approx(np.array([[5.0, 0.0]]))
    assert derive_velocities(scene, 1) == pytest.approx(np.array([[5.0, 0.0]]))


def test_derive_velocities_stationary_agent(line_scene):
    scene = line_scene([[3.0, 4.0]], [[0.0, 0.0]])
    assert np.array_equal(derive_velocities(scene, 10), np.zeros((1, 2)))


def test_derive_velocities_translation_equivariant(line_scene):
    rng = np.random.default_rng(1)
    positions = rng.normal(size=(2, 40, 2))
    a = make_scene('a', 'external', 0.25, 15, positions)
    b = make_scene('b', 'external', 0.25, 15, positions + np.array([8.0, -4.0]))
    for t in (1, 7, 40):
        assert np.allclose(derive_velocities(a, t), derive_velocities(b, t), atol=1e-12)


def test_derive_velocities_frame_out_of_range(line_scene):
    with pytest.raises(ValueError):
        derive_velocities(line_scene([[0.0, 0.0]], [[1.0, 0.0]]), 41)


def _dataset(count, line_scene):
    return Dataset(scenes=[line_scene([[0.0, 0.0]], [[1.0, 0.0]], scene_id=f'scene-{k:03d}') for k in range(count)])


def test_split_four_scenes(line_scene):
    split = split_dataset(_dataset(4, line_scene), 0.75, 7)
    assert len(split.train_scenes()) == 3
    assert len(split.test_scenes()) == 1


def test_split_is_deterministic_and_order_independent(line_scene):
    ds = _dataset(10, line_scene)
    a = split_dataset(ds, 0.75, 7)
    b = split_dataset(ds, 0.75, 7)
    c = split_dataset(Dataset(scenes=list(reversed(ds.scenes))), 0.75, 7)
    assert a.split == b.split == c.split


def test_split_hundred_scenes(line_scene):
    assert len(split_dataset(_dataset(100, line_scene), 0.75, 3).train_scenes()) == 75


def test_split_needs_two_scenes(line_scene):
    with pytest.raises(ValueError):
        split_dataset(_dataset(1, line_scene), 0.75, 7)


def test_convert_csv_skips_incomplete_scenes(tmp_path):
    rows = []
    for frame in range(1, 21):
        for agent in (1, 2):
            rows.append({'scene_id': 'full', 'agent_id': agent, 'frame': frame, 'x': frame * 0.5, 'y': agent * 3.5})
    for frame in range(1, 21):
        if frame != 10:
            rows.append({'scene_id': 'gap', 'agent_id': 1, 'frame': frame, 'x': 0.0, 'y': 0.0})
        rows.append({'scene_id': 'gap', 'agent_id': 2, 'frame': frame, 'x': 1.0, 'y': 0.0})
    csv_path = tmp_path / 'tracks.csv'
    pd.DataFrame(rows).to_csv(csv_path, index=False)

    out = tmp_path / 'converted.jsonl'
    result = convert_csv(str(csv_path), str(out), dt=0.2, t_h=8)
    assert result['scene_count'] == 1
    assert result['skipped'] == 1
    scenes = load_scenes(str(out)).scenes
    assert scenes[0].scene_id == 'full'
    assert scenes[0].scenario_kind == ScenarioKind.EXTERNAL
    assert scenes[0].t_p == 20
    assert scenes[0].positions()[1, 0].tolist() == [0.5, 7.0]
