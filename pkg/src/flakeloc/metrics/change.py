"""
Change metrics from version-control history.

For every class file the history yields the number of distinct commits that
touched it (following renames backwards), the number of distinct authors of
those commits, and the age in days of the most recent such commit.
"""

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Set, Union

import structlog

from ..errors import InputValidationError
from .tables import MetricFamily, MetricTable

logger = structlog.get_logger(__name__)

SECONDS_PER_DAY = 86400.0


class FileStatus(Enum):
    """How a commit touched a file."""

    ADDED = "added"
    MODIFIED = "modified"
    DELETED = "deleted"
    RENAMED = "renamed"


@dataclass(frozen=True)
class FileChange:
    """One file entry of a commit."""

    path: str
    status: FileStatus
    old_path: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "status", FileStatus(self.status))
        if self.status is FileStatus.RENAMED and not self.old_path:
            raise InputValidationError(f"renamed file {self.path!r} needs old_path")

    def to_dict(self) -> Dict[str, str]:
        """Convert to dictionary for serialization."""
        data = {"path": self.path, "status": self.status.value}
        if self.old_path is not None:
            data["old_path"] = self.old_path
        return data


@dataclass(frozen=True)
class CommitRecord:
    """A commit: hash, unix timestamp, author and touched files."""

    hash: str
    timestamp: int
    author: str
    files: tuple

    def to_dict(self) -> Dict[str, object]:
        """Convert to dictionary for serialization."""
        return {
            "hash": self.hash,
            "timestamp": self.timestamp,
            "author": self.author,
            "files": [f.to_dict() for f in self.files],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, object]) -> "CommitRecord":
        """Create from dictionary."""
        try:
            files = tuple(
                FileChange(path=f["path"], status=f["status"], old_path=f.get("old_path"))
                for f in data["files"]
            )
            return cls(
                hash=str(data["hash"]),
                timestamp=int(data["timestamp"]),
                author=str(data["author"]),
                files=files,
            )
        except (KeyError, TypeError, ValueError) as e:
            raise InputValidationError(f"malformed commit record: {e}") from None


@dataclass(frozen=True)
class CommitLog:
    """Commit records in any order; histories may be non-linear."""

    commits: tuple

    def __post_init__(self):
        object.__setattr__(self, "commits", tuple(self.commits))
        seen: Set[str] = set()
        for commit in self.commits:
            if commit.hash in seen:
                raise InputValidationError(f"duplicate commit hash {commit.hash!r}")
            seen.add(commit.hash)

    def __len__(self) -> int:
        return len(self.commits)


def parse_commit_log(source: Union[str, Path, Iterable[str]]) -> CommitLog:
    """Read a JSON-lines commit log."""
    name = "<commit log>"
    if isinstance(source, (str, Path)):
        name = str(source)
        try:
            lines: Iterable[str] = Path(source).read_text(encoding="utf-8").splitlines()
        except OSError as e:
            raise InputValidationError(f"cannot read commit log: {e}", name) from e
    else:
        lines = source

    records: List[CommitRecord] = []
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            records.append(CommitRecord.from_dict(json.loads(line)))
        except json.JSONDecodeError as e:
            raise InputValidationError(f"invalid JSON: {e.msg}", f"{name}:{line_no}") from None
        except InputValidationError as e:
            raise InputValidationError(str(e), f"{name}:{line_no}") from None
    try:
        return CommitLog(records)
    except InputValidationError as e:
        raise InputValidationError(str(e), name) from None


def write_commit_log(log: CommitLog, path: Union[str, Path]) -> None:
    """Write a JSON-lines commit log."""
    lines = [json.dumps(c.to_dict(), sort_keys=True) for c in log.commits]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def commit_log_from_repo(repo_path: Union[str, Path], rev: str = "HEAD") -> CommitLog:
    """Build a CommitLog from a local git repository with GitPython."""
    from git import NULL_TREE, Repo
    from git.exc import GitError

    try:
        repo = Repo(str(repo_path))
    except (GitError, OSError) as e:
        raise InputValidationError(f"not a git repository: {e}", str(repo_path)) from e

    status_map = {"A": FileStatus.ADDED, "M": FileStatus.MODIFIED, "D": FileStatus.DELETED, "R": FileStatus.RENAMED}
    records: List[CommitRecord] = []
    for commit in repo.iter_commits(rev):
        files = []
        if not commit.parents:
            # Root commit: every file is new
            files = [
                FileChange(path=diff.a_path or diff.b_path, status=FileStatus.ADDED)
                for diff in commit.diff(NULL_TREE)
            ]
        for diff in commit.parents[0].diff(commit) if commit.parents else ():
            status = status_map.get(diff.change_type, FileStatus.MODIFIED)
            if status is FileStatus.RENAMED:
                files.append(FileChange(path=diff.rename_to, status=status, old_path=diff.rename_from))
            elif status is FileStatus.DELETED:
                files.append(FileChange(path=diff.a_path, status=status))
            else:
                files.append(FileChange(path=diff.b_path, status=status))
        records.append(
            CommitRecord(
                hash=commit.hexsha,
                timestamp=int(commit.committed_date),
                author=commit.author.email or commit.author.name,
                files=tuple(files),
            )
        )
    logger.info("git_history_read", repo=str(repo_path), commits=len(records))
    return CommitLog(records)


def _alias_cutoffs(log: CommitLog, path: str) -> Dict[str, float]:
    """Every earlier name of ``path`` with the last time it carried that name."""
    cutoffs: Dict[str, float] = {path: float("inf")}
    renames = [
        (commit.timestamp, change.path, change.old_path)
        for commit in log.commits
        for change in commit.files
        if change.status is FileStatus.RENAMED
    ]
    changed = True
    while changed:
        changed = False
        for timestamp, new_path, old_path in renames:
            if new_path in cutoffs and timestamp <= cutoffs[new_path]:
                if cutoffs.get(old_path, float("-inf")) < timestamp:
                    cutoffs[old_path] = float(timestamp)
                    changed = True
    return cutoffs


def _touches(commit: CommitRecord, cutoffs: Mapping[str, float]) -> bool:
    for change in commit.files:
        if change.path in cutoffs and commit.timestamp <= cutoffs[change.path]:
            return True
    return False


def extract_change_metrics(
    log: CommitLog,
    class_paths: Mapping[str, str],
    analysis_time: int,
) -> MetricTable:
    """Unique changes, developers and age (days) for each class file."""
    values: Dict[str, tuple] = {}
    warnings: List[str] = []

    for class_id, path in class_paths.items():
        cutoffs = _alias_cutoffs(log, path)
        touching = [c for c in log.commits if _touches(c, cutoffs)]
        if not touching:
            message = f"class {class_id}: path {path!r} never appears in the commit log"
            warnings.append(message)
            logger.warning("class_path_not_in_log", class_id=class_id, path=path)
            values[class_id] = (0.0, 0.0, 0.0)
            continue

        latest = max(c.timestamp for c in touching)
        if analysis_time < latest:
            raise InputValidationError(
                f"analysis time {analysis_time} precedes commit at {latest} touching {path!r}"
            )
        changes = len({c.hash for c in touching})
        developers = len({c.author for c in touching})
        age = (analysis_time - latest) / SECONDS_PER_DAY
        values[class_id] = (float(changes), age, float(developers))

    return MetricTable(
        family=MetricFamily.CHANGE,
        values=values,
        columns=("changes", "age", "developers"),
        warnings=tuple(warnings),
    )


def latest_timestamp(log: CommitLog) -> int:
    """Most recent commit time, 0 for an empty log."""
    return max((c.timestamp for c in log.commits), default=0)
