"""
Accuracy and timing records produced by the experiment suites.
"""
import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

logger = logging.getLogger(__name__)

MODE_COLUMNS = ("no_attack", "no_defense", "vae", "vae_rec", "vae_e2e")
AVERAGE_ROW = "Average"
CLEAN_ATTACK = "clean"


@dataclass
class ReportRow:
    attack: str
    classifier: str
    mode: str
    correct: int
    n_examples: int
    wall_time_s: float = 0.0

    @property
    def accuracy(self) -> float:
        return self.correct / self.n_examples if self.n_examples else 0.0


@dataclass
class TimingRow:
    method: str
    steps: int
    restarts: int
    n_images: int
    wall_time_s: float
    accuracy: Optional[float] = None


@dataclass
class EvalReport:
    """
    Accuracy cells keyed by (attack, classifier, mode) plus timing rows.

    Attributes:
        name: report name, used for output file names
        rows: one ReportRow per measured cell
        timings: wall-clock rows of the speed benchmark
        metadata: seeds, configs and build id needed to recompute every cell
        with_average: append an unweighted Average row when written
    """
    name: str
    rows: List[ReportRow] = field(default_factory=list)
    timings: List[TimingRow] = field(default_factory=list)
    metadata: Dict[str, str] = field(default_factory=dict)
    with_average: bool = False

    def add(self, attack: str, classifier: str, mode: str, correct: int, n_examples: int,
            wall_time_s: float = 0.0) -> ReportRow:
        if mode not in MODE_COLUMNS:
            raise ValueError(f"Unknown defense mode column '{mode}'")
        row = ReportRow(attack, classifier, mode, int(correct), int(n_examples), float(wall_time_s))
        self.rows.append(row)
        logger.info(f"[{self.name}] {attack} / {classifier} / {mode}: {100.0 * row.accuracy:.2f}% "
                    f"({row.correct}/{row.n_examples})")
        return row

    def is_empty(self) -> bool:
        return not self.rows and not self.timings

    def cell(self, attack: str, classifier: str, mode: str) -> Optional[float]:
        for row in self.rows:
            if (row.attack, row.classifier, row.mode) == (attack, classifier, mode):
                return row.accuracy
        return None

    def grouped(self) -> "OrderedDict[Tuple[str, str], Dict[str, ReportRow]]":
        """Rows pivoted to (attack, classifier) -> {mode: row}, sorted lexicographically."""
        groups: Dict[Tuple[str, str], Dict[str, ReportRow]] = {}
        for row in self.rows:
            groups.setdefault((row.attack, row.classifier), {})[row.mode] = row
        return OrderedDict(sorted(groups.items()))

    def averages(self) -> Dict[str, float]:
        """Unweighted mean of the cells in each mode column; clean rows are left out."""
        columns: Dict[str, List[float]] = {}
        for (attack, _), cells in self.grouped().items():
            if attack == CLEAN_ATTACK:
                continue
            for mode, row in cells.items():
                columns.setdefault(mode, []).append(row.accuracy)
        return {mode: sum(values) / len(values) for mode, values in columns.items()}

    def merge(self, other: "EvalReport") -> None:
        self.rows.extend(other.rows)
        self.timings.extend(other.timings)
        self.metadata.update(other.metadata)
