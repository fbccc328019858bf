"""Per-accent phoneme inventories, a table-driven G2P, and alignment files.

Every accent owns a contiguous block of global phoneme IDs.  Index 0 of each
block is the pad symbol, which is also where unknown characters land.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

logger = logging.getLogger(__name__)

PAD = "<pad>"


class FrontendError(ValueError):
    pass


@dataclass(frozen=True)
class AccentId:
    name: str
    index: int

    def __post_init__(self) -> None:
        if not self.name:
            raise FrontendError("accent name must be nonempty")
        if self.index < 0:
            raise FrontendError("accent index must be non-negative")


@dataclass(frozen=True)
class PhonemeInventory:
    accent: AccentId
    symbols: tuple[str, ...]
    offset: int

    def __len__(self) -> int:
        return len(self.symbols)

    @property
    def pad_id(self) -> int:
        return self.offset

    def id_of(self, symbol: str) -> int:
        try:
            return self.offset + self.symbols.index(symbol)
        except ValueError:
            raise FrontendError(
                f"unknown phoneme {symbol!r} for accent {self.accent.name!r}"
            ) from None

    def __contains__(self, global_id: int) -> bool:
        return self.offset <= global_id < self.offset + len(self.symbols)


@dataclass
class PhonemeSequence:
    accent: AccentId
    ids: list[int]
    durations: list[int] | None = None
    n_unknown: int = 0

    def __post_init__(self) -> None:
        if not self.ids:
            raise FrontendError("phoneme sequence is empty")
        if self.durations is not None:
            if len(self.durations) != len(self.ids):
                raise FrontendError(
                    f"{len(self.durations)} durations for {len(self.ids)} phonemes"
                )
            if any(d <= 0 for d in self.durations):
                raise FrontendError("durations must be positive")

    @property
    def n_frames(self) -> int | None:
        return None if self.durations is None else sum(self.durations)


class Registry:
    """Accent inventories plus per-accent character rules.

    Build it at startup and call :meth:`freeze`; afterwards it is read-only and
    safe to share across threads.
    """

    def __init__(self) -> None:
        self._inventories: dict[str, PhonemeInventory] = {}
        self._rules: dict[str, dict[str, str]] = {}
        self._next_id = 0
        self._frozen = False

    def _check_mutable(self) -> None:
        if self._frozen:
            raise FrontendError("registry is frozen")

    def freeze(self) -> Registry:
        self._frozen = True
        return self

    @property
    def frozen(self) -> bool:
        return self._frozen

    @property
    def n_symbols(self) -> int:
        return self._next_id

    @property
    def accents(self) -> list[AccentId]:
        return [inv.accent for inv in self._inventories.values()]

    def register_inventory(self, accent: AccentId | str, symbols: Iterable[str]) -> PhonemeInventory:
        self._check_mutable()
        symbols = list(symbols)
        name = accent.name if isinstance(accent, AccentId) else accent
        if name in self._inventories:
            raise FrontendError(f"accent {name!r} already registered")
        if not symbols:
            raise FrontendError("empty symbol list")
        seen: set[str] = set()
        for s in symbols:
            if s in seen:
                raise FrontendError(f"duplicate symbol {s!r} in inventory {name!r}")
            seen.add(s)
        if symbols[0] != PAD:
            # pad always sits at local index 0
            if PAD in seen:
                raise FrontendError(f"{PAD!r} must be the first symbol")
            symbols = [PAD, *symbols]
        if len(symbols) < 2:
            raise FrontendError("inventory needs at least one symbol besides pad")
        acc = AccentId(name, len(self._inventories))
        inv = PhonemeInventory(acc, tuple(symbols), self._next_id)
        self._inventories[name] = inv
        self._rules[name] = {}
        self._next_id += len(symbols)
        return inv

    def inventory(self, accent: AccentId | str) -> PhonemeInventory:
        name = accent.name if isinstance(accent, AccentId) else accent
        try:
            return self._inventories[name]
        except KeyError:
            raise FrontendError(f"accent {name!r} is not registered") from None

    def accent(self, name: str) -> AccentId:
        return self.inventory(name).accent

    def set_rules(self, accent: AccentId | str, rules: dict[str, str]) -> None:
        self._check_mutable()
        inv = self.inventory(accent)
        for ch, sym in rules.items():
            if len(ch) != 1:
                raise FrontendError(f"rule key {ch!r} is not a single character")
            inv.id_of(sym)
        self._rules[inv.accent.name] = dict(rules)

    def load_rules(self, path: str | Path, accent: AccentId | str | None = None) -> None:
        """Read a ``<accent>.g2p`` table of ``CHAR<TAB>SYMBOL`` lines."""
        path = Path(path)
        if accent is None:
            accent = path.name.removesuffix(".g2p")
        rules: dict[str, str] = {}
        for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise FrontendError(f"{path}:{lineno}: expected CHAR<TAB>SYMBOL")
            rules[parts[0]] = parts[1].strip()
        self.set_rules(accent, rules)

    def rules(self, accent: AccentId | str) -> dict[str, str]:
        return dict(self._rules[self.inventory(accent).accent.name])

    def decode(self, global_id: int) -> tuple[AccentId, str]:
        for inv in self._inventories.values():
            if global_id in inv:
                return inv.accent, inv.symbols[global_id - inv.offset]
        raise FrontendError(f"phoneme id {global_id} outside every inventory")

    def encode(self, accent: AccentId | str, symbol: str) -> int:
        return self.inventory(accent).id_of(symbol)

    def g2p(self, text: str, accent: AccentId | str) -> PhonemeSequence:
        """Map characters to phonemes through the accent's rule table.

        Whitespace separates nothing and is skipped.  Characters without a rule
        become the accent's pad symbol and are counted in ``n_unknown``.
        """
        inv = self.inventory(accent)
        table = self._rules[inv.accent.name]
        text = text.strip()
        if not text:
            raise FrontendError("text is empty")
        ids: list[int] = []
        unknown = 0
        for ch in text:
            if ch.isspace():
                continue
            sym = table.get(ch)
            if sym is None:
                unknown += 1
                ids.append(inv.pad_id)
            else:
                ids.append(inv.id_of(sym))
        if unknown:
            logger.warning("g2p[%s]: %d unknown character(s) in %r", inv.accent.name, unknown, text)
        return PhonemeSequence(inv.accent, ids, None, unknown)

    def to_dict(self) -> dict:
        return {
            "accents": [
                {"name": inv.accent.name, "symbols": list(inv.symbols), "rules": self._rules[name]}
                for name, inv in self._inventories.items()
            ]
        }

    @classmethod
    def from_dict(cls, d: dict) -> Registry:
        reg = cls()
        for item in d["accents"]:
            reg.register_inventory(item["name"], item["symbols"])
            reg.set_rules(item["name"], item.get("rules", {}))
        return reg.freeze()


def parse_alignment(text: str, registry: Registry, accent: AccentId | str, *, source: str = "<string>") -> PhonemeSequence:
    inv = registry.inventory(accent)
    ids: list[int] = []
    durs: list[int] = []
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        parts = stripped.split()
        if len(parts) != 2:
            raise FrontendError(f"{source}:{lineno}: malformed line {line!r}")
        sym, frames = parts
        try:
            d = int(frames)
        except ValueError:
            raise FrontendError(f"{source}:{lineno}: frame count {frames!r} is not an integer") from None
        if d <= 0:
            raise FrontendError(f"{source}:{lineno}: nonpositive duration {d}")
        try:
            ids.append(inv.id_of(sym))
        except FrontendError as e:
            raise FrontendError(f"{source}:{lineno}: {e}") from None
        durs.append(d)
    if not ids:
        raise FrontendError(f"{source}: no phonemes")
    return PhonemeSequence(inv.accent, ids, durs)


def load_alignment(path: str | Path, registry: Registry, accent: AccentId | str) -> PhonemeSequence:
    """Read a ``<utt_id>.dur`` file of ``SYMBOL<TAB>FRAMES`` lines."""
    path = Path(path)
    return parse_alignment(path.read_text(encoding="utf-8"), registry, accent, source=str(path))


def format_alignment(seq: PhonemeSequence, registry: Registry) -> str:
    if seq.durations is None:
        raise FrontendError("sequence has no durations")
    inv = registry.inventory(seq.accent)
    lines = [f"{inv.symbols[i - inv.offset]}\t{d}" for i, d in zip(seq.ids, seq.durations)]
    return "\n".join(lines) + "\n"


def save_alignment(path: str | Path, seq: PhonemeSequence, registry: Registry) -> None:
    Path(path).write_text(format_alignment(seq, registry), encoding="utf-8")
