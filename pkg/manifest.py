"""
Run manifests: everything needed to reproduce an output, plus sha256 digests
of the files a run wrote
"""

import hashlib
import json
import logging
import platform
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional

import numpy as np
import scipy

from config import Config
from exceptions import CloudFormatError

logger = logging.getLogger(__name__)

MANIFEST_NAME = 'manifest.json'


# ============================================================================
# DETERMINISTIC JSON + HASHING
# ============================================================================

def canonical_json_bytes(obj) -> bytes:
    text = json.dumps(obj, sort_keys=True, indent=2, separators=(',', ': '), allow_nan=True)
    return (text + '\n').encode('utf-8')


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, 'rb') as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b''):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass
class RunManifest:
    """Inputs, environment and output digests of one CLI or atlas run"""
    command: str
    design_digest: Optional[str] = None
    design: Optional[Dict[str, Any]] = None
    sampler: Optional[Dict[str, Any]] = None
    seeds: Dict[str, int] = field(default_factory=dict)
    parameters: Dict[str, Any] = field(default_factory=dict)
    wall_clock: float = 0.0
    outputs: Dict[str, str] = field(default_factory=dict)
    tool_version: str = Config.VERSION
    created: str = ''
    environment: Dict[str, str] = field(default_factory=dict)

    def add_output(self, path, root=None) -> None:
        """Record the sha256 of a written file, keyed relative to root"""
        path = Path(path)
        key = str(path.relative_to(root)) if root else path.name
        self.outputs[key] = sha256_file(path)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def environment_info() -> Dict[str, str]:
    return {
        'python': platform.python_version(),
        'platform': platform.platform(),
        'numpy': np.__version__,
        'scipy': scipy.__version__
    }


def new_manifest(command: str, **kwargs) -> RunManifest:
    manifest = RunManifest(command=command, **kwargs)
    manifest.created = datetime.now(timezone.utc).replace(microsecond=0).isoformat().replace('+00:00', 'Z')
    manifest.environment = environment_info()
    return manifest


def write_manifest(manifest: RunManifest, directory, outputs: Iterable = ()) -> Path:
    """
    Digest the given output files and write manifest.json into directory

    Returns:
        Path of the manifest
    """
    directory = Path(directory)
    for path in outputs:
        manifest.add_output(path, root=directory)
    target = directory / MANIFEST_NAME
    target.write_bytes(canonical_json_bytes(manifest.to_dict()))
    logger.info(f'Manifest with {len(manifest.outputs)} output digests written to {target}')
    return target


def manifest_path_for(output) -> Path:
    """Manifest location for a single-file output: <stem>.manifest.json beside it"""
    output = Path(output)
    return output.with_name(output.stem + '.' + MANIFEST_NAME)


def write_sidecar_manifest(manifest: RunManifest, outputs: List) -> Path:
    """Manifest beside the first output, digests keyed by names in the same directory"""
    first = Path(outputs[0])
    for path in outputs:
        manifest.add_output(path, root=first.parent)
    target = manifest_path_for(first)
    target.write_bytes(canonical_json_bytes(manifest.to_dict()))
    logger.info(f'Manifest written to {target}')
    return target


def load_manifest(path) -> Dict[str, Any]:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise CloudFormatError(f'malformed manifest {path}: {e.msg}', offset=e.pos)


def verify_manifest(path) -> Dict[str, List[str]]:
    """
    Recompute output digests against a manifest

    Returns:
        dict: matched, mismatched and missing file keys
    """
    path = Path(path)
    record = load_manifest(path)
    report = {'matched': [], 'mismatched': [], 'missing': []}
    for key, expected in sorted(record.get('outputs', {}).items()):
        target = path.parent / key
        if not target.exists():
            report['missing'].append(key)
        elif sha256_file(target) == expected:
            report['matched'].append(key)
        else:
            report['mismatched'].append(key)

    if report['mismatched'] or report['missing']:
        logger.warning(f'Manifest {path}: {len(report["mismatched"])} mismatched, '
                       f'{len(report["missing"])} missing outputs')
    return report
