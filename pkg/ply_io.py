"""
Binary PLY and ASCII OFF readers/writers for clouds and triangle meshes

Only the little-endian layouts written here are read back; other PLY
flavours raise CloudFormatError.
"""

import json
import logging
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np

from exceptions import CloudFormatError

logger = logging.getLogger(__name__)

_PLY_TYPES = {
    'double': '<f8',
    'float': '<f4',
    'uchar': 'u1',
    'int': '<i4',
    'uint': '<u4'
}
_DTYPE_NAMES = {np.dtype(v).str: k for k, v in _PLY_TYPES.items()}


def _header(comments: List[str], elements: List[Tuple[str, int, List[str]]]) -> bytes:
    lines = ['ply', 'format binary_little_endian 1.0']
    lines += [f'comment {c}' for c in comments]
    for name, count, properties in elements:
        lines.append(f'element {name} {count}')
        lines += properties
    lines.append('end_header')
    return ('\n'.join(lines) + '\n').encode('ascii')


def _split_header(blob: bytes):
    """Return (header lines, body offset)"""
    if not blob.startswith(b'ply\n'):
        raise CloudFormatError('missing PLY magic', offset=0)
    end = blob.find(b'end_header\n')
    if end < 0:
        raise CloudFormatError('PLY header is not terminated', offset=len(blob))
    try:
        text = blob[:end].decode('ascii')
    except UnicodeDecodeError as e:
        raise CloudFormatError('PLY header is not ASCII', offset=e.start)
    return text.splitlines(), end + len('end_header\n')


def _parse_header(lines: List[str]):
    """Comments plus a list of (element, count, [(property, dtype or list spec)])"""
    comments, elements = [], []
    offset = 0
    for line in lines:
        parts = line.split()
        if not parts or parts[0] == 'ply':
            pass
        elif parts[0] == 'format':
            if parts[1:] != ['binary_little_endian', '1.0']:
                raise CloudFormatError(f'unsupported PLY format: {line}', offset=offset)
        elif parts[0] == 'comment':
            comments.append(line[len('comment '):])
        elif parts[0] == 'element':
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == 'property' and elements:
            if parts[1] == 'list':
                elements[-1][2].append((parts[4], ('list', parts[2], parts[3])))
            elif parts[1] in _PLY_TYPES:
                elements[-1][2].append((parts[2], _PLY_TYPES[parts[1]]))
            else:
                raise CloudFormatError(f'unsupported PLY property type: {line}', offset=offset)
        else:
            raise CloudFormatError(f'unexpected PLY header line: {line}', offset=offset)
        offset += len(line) + 1
    return comments, elements


def _read_block(blob: bytes, offset: int, dtype: np.dtype, count: int, what: str):
    needed = dtype.itemsize * count
    if len(blob) - offset < needed:
        raise CloudFormatError(
            f'truncated {what} data: expected {needed} bytes, found {len(blob) - offset}',
            offset=len(blob)
        )
    return np.frombuffer(blob, dtype=dtype, count=count, offset=offset).copy(), offset + needed


# ============================================================================
# CLOUDS
# ============================================================================

def cloud_dtype(n_bundles: int) -> np.dtype:
    fields = [('x', '<f8'), ('y', '<f8'), ('z', '<f8'),
              ('red', 'u1'), ('green', 'u1'), ('blue', 'u1')]
    fields += [(f'gamma_{b}', '<f4') for b in range(n_bundles)]
    return np.dtype(fields)


def write_cloud_ply(path, positions: np.ndarray, colors: np.ndarray, activations: np.ndarray,
                    header: Dict[str, object]) -> None:
    """
    Write a cloud as binary little-endian PLY

    Every header entry becomes a `comment key value` line with the value
    stored as canonical JSON.
    """
    n, n_bundles = activations.shape
    dtype = cloud_dtype(n_bundles)
    data = np.empty(n, dtype=dtype)
    data['x'], data['y'], data['z'] = positions[:, 0], positions[:, 1], positions[:, 2]
    data['red'], data['green'], data['blue'] = colors[:, 0], colors[:, 1], colors[:, 2]
    for b in range(n_bundles):
        data[f'gamma_{b}'] = activations[:, b]

    write_vertex_ply(path, data, header)


def write_vertex_ply(path, data: np.ndarray, header: Dict[str, object]) -> None:
    """Structured vertex array as binary PLY with JSON-valued header comments"""
    comments = []
    for key in sorted(header):
        text = json.dumps(header[key], sort_keys=True, separators=(',', ':'))
        comments.append(f'{key} {text}')
    dtype = data.dtype
    properties = [f'property {_DTYPE_NAMES[dtype.fields[name][0].str]} {name}' for name in dtype.names]

    with open(path, 'wb') as handle:
        handle.write(_header(comments, [('vertex', len(data), properties)]))
        handle.write(data.tobytes())
    logger.debug(f'PLY with {len(data)} vertices written to {path}')


def read_cloud_ply(path):
    """
    Read a cloud written by write_cloud_ply

    Returns:
        tuple: (positions float64 (N,3), colors uint8 (N,3), activations float32 (N,B), header dict)
    """
    blob = Path(path).read_bytes()
    lines, body = _split_header(blob)
    comments, elements = _parse_header(lines)
    if len(elements) != 1 or elements[0][0] != 'vertex':
        raise CloudFormatError('cloud PLY must contain exactly one vertex element', offset=body)

    _, count, properties = elements[0]
    names = [name for name, _ in properties]
    if names[:6] != ['x', 'y', 'z', 'red', 'green', 'blue']:
        raise CloudFormatError(f'unexpected cloud vertex layout {names}', offset=body)
    if any(not isinstance(spec, str) for _, spec in properties):
        raise CloudFormatError('list properties are not allowed in cloud vertices', offset=body)
    dtype = np.dtype([(name, spec) for name, spec in properties])
    data, end = _read_block(blob, body, dtype, count, 'vertex')
    if end != len(blob):
        raise CloudFormatError(f'{len(blob) - end} trailing bytes after vertex data', offset=end)

    header = {}
    for comment in comments:
        key, _, text = comment.partition(' ')
        try:
            header[key] = json.loads(text)
        except ValueError:
            raise CloudFormatError(f'malformed header comment: {comment}', offset=0)

    gamma_names = [name for name in names[6:]]
    positions = np.stack([data['x'], data['y'], data['z']], axis=1).astype('<f8')
    colors = np.stack([data['red'], data['green'], data['blue']], axis=1).astype(np.uint8)
    activations = (np.stack([data[g] for g in gamma_names], axis=1).astype(np.float32)
                   if gamma_names else np.zeros((count, 0), dtype=np.float32))
    return positions, colors, activations, header


# ============================================================================
# MESHES
# ============================================================================

_FACE_DTYPE = np.dtype([('count', 'u1'), ('vertex_indices', '<i4', (3,))])


def write_mesh_ply(path, vertices: np.ndarray, faces: np.ndarray, comments: List[str] = ()) -> None:
    """Triangle mesh as binary PLY (double vertices, int32 index lists)"""
    vertex_data = np.ascontiguousarray(vertices, dtype='<f8')
    face_data = np.empty(len(faces), dtype=_FACE_DTYPE)
    face_data['count'] = 3
    face_data['vertex_indices'] = faces
    header = _header(list(comments), [
        ('vertex', len(vertex_data), ['property double x', 'property double y', 'property double z']),
        ('face', len(face_data), ['property list uchar int vertex_indices'])
    ])
    with open(path, 'wb') as handle:
        handle.write(header)
        handle.write(vertex_data.tobytes())
        handle.write(face_data.tobytes())
    logger.debug(f'PLY mesh with {len(vertex_data)} vertices and {len(face_data)} faces written to {path}')


def read_mesh_ply(path):
    """Read a triangle mesh written by write_mesh_ply; returns (vertices, faces)"""
    blob = Path(path).read_bytes()
    lines, body = _split_header(blob)
    _, elements = _parse_header(lines)
    counts = {name: count for name, count, _ in elements}
    if [name for name, _, _ in elements] != ['vertex', 'face']:
        raise CloudFormatError('mesh PLY must contain vertex and face elements', offset=body)

    vertices, offset = _read_block(blob, body, np.dtype('<f8'), 3 * counts['vertex'], 'vertex')
    faces, offset = _read_block(blob, offset, _FACE_DTYPE, counts['face'], 'face')
    if np.any(faces['count'] != 3):
        raise CloudFormatError('only triangle faces are supported', offset=offset)
    return vertices.reshape(-1, 3), faces['vertex_indices'].astype(np.int64)


def write_off(path, vertices: np.ndarray, faces: np.ndarray) -> None:
    """Triangle mesh as ASCII OFF"""
    with open(path, 'w') as handle:
        handle.write('OFF\n')
        handle.write(f'{len(vertices)} {len(faces)} 0\n')
        for v in vertices:
            handle.write(' '.join(repr(float(c)) for c in v) + '\n')
        for f in faces:
            handle.write(f'3 {int(f[0])} {int(f[1])} {int(f[2])}\n')
    logger.debug(f'OFF mesh written to {path}')


def read_off(path):
    """Read an ASCII OFF triangle mesh; returns (vertices, faces)"""
    tokens = Path(path).read_text().split()
    if not tokens or tokens[0] != 'OFF':
        raise CloudFormatError('missing OFF magic', offset=0)
    try:
        n_vertices, n_faces = int(tokens[1]), int(tokens[2])
        cursor = 4
        vertices = np.array(tokens[cursor:cursor + 3 * n_vertices], dtype=float).reshape(n_vertices, 3)
        cursor += 3 * n_vertices
        faces = np.array(tokens[cursor:cursor + 4 * n_faces], dtype=np.int64).reshape(n_faces, 4)
    except (IndexError, ValueError) as e:
        raise CloudFormatError(f'malformed OFF body: {e}')
    if np.any(faces[:, 0] != 3):
        raise CloudFormatError('only triangle faces are supported')
    return vertices, faces[:, 1:]
