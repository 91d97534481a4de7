"""
Tests for the PLY and OFF readers/writers
"""

import numpy as np
import pytest

import ply_io
from exceptions import CloudFormatError

TETRA_VERTICES = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
TETRA_FACES = np.array([[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]])


def test_mesh_ply_round_trip(tmp_path):
    path = tmp_path / 'tetra.ply'
    ply_io.write_mesh_ply(path, TETRA_VERTICES, TETRA_FACES)
    vertices, faces = ply_io.read_mesh_ply(path)
    assert np.array_equal(vertices, TETRA_VERTICES)
    assert np.array_equal(faces, TETRA_FACES)
    assert faces.dtype == np.int64


def test_off_round_trip_is_exact(tmp_path):
    path = tmp_path / 'tetra.off'
    vertices = TETRA_VERTICES + np.array([0.1, 1.0 / 3.0, 2e-17])
    ply_io.write_off(path, vertices, TETRA_FACES)
    assert path.read_text().startswith('OFF\n4 4 0\n')
    read_vertices, read_faces = ply_io.read_off(path)
    assert np.array_equal(read_vertices, vertices)
    assert np.array_equal(read_faces, TETRA_FACES)


def test_cloud_header_comments(tmp_path):
    path = tmp_path / 'cloud.ply'
    positions = np.array([[0.0, 0.1, 0.9], [0.2, -0.1, 0.8]])
    colors = np.array([[1, 2, 3], [4, 5, 6]], dtype=np.uint8)
    activations = np.array([[-1.0, -0.5], [0.0, -1.5]], dtype=np.float32)
    ply_io.write_cloud_ply(path, positions, colors, activations, {'b': [1, 2], 'a': {'k': 'v'}})

    text = path.read_bytes().split(b'end_header\n')[0].decode('ascii')
    assert 'comment a {"k":"v"}' in text
    assert 'property float gamma_1' in text
    read_positions, read_colors, read_activations, header = ply_io.read_cloud_ply(path)
    assert np.array_equal(read_positions, positions)
    assert np.array_equal(read_colors, colors)
    assert np.array_equal(read_activations, activations)
    assert header == {'a': {'k': 'v'}, 'b': [1, 2]}


def test_bad_magic(tmp_path):
    path = tmp_path / 'bad.ply'
    path.write_bytes(b'PLY\nformat binary_little_endian 1.0\nend_header\n')
    with pytest.raises(CloudFormatError) as err:
        ply_io.read_cloud_ply(path)
    assert err.value.offset == 0


def test_ascii_ply_is_rejected(tmp_path):
    path = tmp_path / 'ascii.ply'
    path.write_bytes(b'ply\nformat ascii 1.0\nelement vertex 0\nend_header\n')
    with pytest.raises(CloudFormatError, match='unsupported PLY format'):
        ply_io.read_mesh_ply(path)


def test_trailing_bytes(tmp_path):
    path = tmp_path / 'cloud.ply'
    positions = np.zeros((3, 3))
    ply_io.write_cloud_ply(path, positions, np.zeros((3, 3), dtype=np.uint8),
                           np.zeros((3, 1), dtype=np.float32), {})
    path.write_bytes(path.read_bytes() + b'\x00\x01')
    with pytest.raises(CloudFormatError, match='trailing bytes'):
        ply_io.read_cloud_ply(path)


def test_truncated_mesh(tmp_path):
    path = tmp_path / 'tetra.ply'
    ply_io.write_mesh_ply(path, TETRA_VERTICES, TETRA_FACES)
    path.write_bytes(path.read_bytes()[:-1])
    with pytest.raises(CloudFormatError, match='truncated face data'):
        ply_io.read_mesh_ply(path)


def test_off_with_quads(tmp_path):
    path = tmp_path / 'quad.off'
    path.write_text('OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n')
    with pytest.raises(CloudFormatError):
        ply_io.read_off(path)
