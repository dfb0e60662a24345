"""
Trajectory and Episode File Tracker
Line-delimited JSON trajectory logs, episode files and per-step feature exports
"""

import csv
import glob
import io
import json
import logging
import os
import tempfile
from typing import Any, Dict, List, Sequence, Tuple

from sn_config import SocialNavError
from sn_simcore import (Action, Episode, EpisodeStatus, StepOutcome, StepRecord, TrajectoryLog)
from sn_social_features import SocialFeatures
from sn_world import Pose

LOG_FORMAT_VERSION = 1
EPISODE_FORMAT_VERSION = 1


class TrajectoryFormatError(SocialNavError):
    """Trajectory log or episode file does not follow the schema"""


def atomic_write_text(path: str, text: str) -> None:
    """Write via a sibling temp file and rename, so readers never see partial files"""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(prefix='.tmp-', dir=directory)
    try:
        with os.fdopen(fd, 'w', newline='\n') as f:
            f.write(text)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def _dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(',', ':'), allow_nan=False)


def write_episode_file(path: str, episodes: Sequence[Episode], generator: Dict[str, Any]) -> None:
    document = {'version': EPISODE_FORMAT_VERSION, 'generator': generator,
                'episodes': [e.to_dict() for e in episodes]}
    atomic_write_text(path, json.dumps(document, indent=2, sort_keys=True) + '\n')


def read_episode_file(path: str) -> Tuple[Dict[str, Any], List[Episode]]:
    try:
        with open(path, 'r') as f:
            document = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise TrajectoryFormatError(f"Cannot read episode file {path}: {e}")
    if isinstance(document, list):
        document = {'generator': {}, 'episodes': document}
    if not isinstance(document, dict) or 'episodes' not in document:
        raise TrajectoryFormatError(f"Episode file {path} has no 'episodes' list")
    return document.get('generator', {}), [Episode.from_dict(e) for e in document['episodes']]


def _record_to_dict(record: StepRecord) -> Dict[str, Any]:
    data = {'type': 'step', 't': record.t, 'agent': record.agent.to_list(),
            'action': record.action.to_list(),
            'pedestrians': [p.to_list() for p in record.pedestrians]}
    data.update(record.outcome.to_dict())
    if record.features is not None:
        data['features'] = record.features.to_dict()
    return data


def _record_from_dict(data: Dict[str, Any]) -> StepRecord:
    features = data.get('features')
    return StepRecord(
        t=int(data['t']),
        agent=Pose.from_list(data['agent']),
        action=Action(*data['action']),
        pedestrians=[Pose.from_list(p) for p in data['pedestrians']],
        outcome=StepOutcome.from_dict(data),
        features=SocialFeatures.from_dict(features) if features is not None else None,
    )


def trajectory_to_text(log: TrajectoryLog) -> str:
    lines = [_dumps({'type': 'header', 'version': LOG_FORMAT_VERSION, 'config': log.config,
                     'episode': log.episode.to_dict(), 'map_id': log.episode.map_id,
                     'map_file': log.map_file, 'policy': log.policy_name})]
    lines.extend(_dumps(_record_to_dict(r)) for r in log.records)
    lines.append(_dumps({'type': 'summary', 'status': log.status.value, 't_end': log.t_end,
                         'return': sum(r.outcome.reward for r in log.records)}))
    return '\n'.join(lines) + '\n'


def trajectory_from_text(text: str, source: str = "<log>") -> TrajectoryLog:
    header, records, summary = None, [], None
    for n, line in enumerate(io.StringIO(text), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            data = json.loads(line)
        except json.JSONDecodeError as e:
            raise TrajectoryFormatError(f"{source}:{n}: invalid JSON ({e})")
        kind = data.get('type')
        if kind == 'header':
            header = data
        elif kind == 'step':
            records.append(_record_from_dict(data))
        elif kind == 'summary':
            summary = data
        else:
            raise TrajectoryFormatError(f"{source}:{n}: unknown record type {kind!r}")
    if header is None or summary is None:
        raise TrajectoryFormatError(f"{source}: missing header or summary line")
    log = TrajectoryLog(episode=Episode.from_dict(header['episode']), records=records,
                        status=EpisodeStatus(summary['status']), policy_name=header.get('policy', ''),
                        config=header.get('config', {}), map_file=header.get('map_file'))
    if len(records) != log.t_end + 1 or log.t_end != summary['t_end']:
        raise TrajectoryFormatError(f"{source}: record count does not match t_end")
    return log


class TrajectoryStore:
    """A directory of per-episode trajectory logs"""

    def __init__(self, directory: str):
        self.directory = directory
        self.logger = logging.getLogger(__name__)

    def path_for(self, index: int) -> str:
        return os.path.join(self.directory, f"episode_{index:05d}.jsonl")

    def features_path_for(self, index: int) -> str:
        return os.path.join(self.directory, f"episode_{index:05d}.features.csv")

    def save(self, log: TrajectoryLog, index: int) -> str:
        path = self.path_for(index)
        atomic_write_text(path, trajectory_to_text(log))
        self.logger.debug(f"Wrote trajectory log {path}")
        return path

    def list_logs(self) -> List[str]:
        return sorted(glob.glob(os.path.join(self.directory, 'episode_*.jsonl')))

    @staticmethod
    def load(path: str) -> TrajectoryLog:
        try:
            with open(path, 'r') as f:
                text = f.read()
        except OSError as e:
            raise TrajectoryFormatError(f"Cannot read trajectory log {path}: {e}")
        return trajectory_from_text(text, source=path)


def export_features_csv(log: TrajectoryLog, path: str) -> None:
    """Flat per-step feature table: t, risk, compass_0..compass_{k-1}"""
    sectors = next((r.features.sectors for r in log.records if r.features is not None), 0)
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(['t', 'risk'] + [f'compass_{j}' for j in range(sectors)])
    for record in log.records:
        if record.features is None:
            continue
        writer.writerow([record.t, repr(record.features.risk)] + [repr(v) for v in record.features.compass])
    atomic_write_text(path, buffer.getvalue())
