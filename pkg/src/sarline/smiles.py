"""SMILES syntax validation, atom counting, and identifier-grade canonicalization.

The parser accepts the organic subset plus bracket atoms, branches, ring
closures, bond symbols, and dot-disconnected components. Valence is not
checked: a syntactically valid but chemically odd string passes, so that
recognizer outputs are never silently rejected. Stereo markers are parsed
and kept on the graph but do not influence the canonical key.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from enum import Enum


class SmilesError(Exception):
    """Base class for SMILES parse failures."""


class EmptyInput(SmilesError):
    pass


class UnmatchedParenthesis(SmilesError):
    def __init__(self, position: int):
        self.position = position
        super().__init__(f"unmatched parenthesis at position {position}")


class UnclosedRingBond(SmilesError):
    def __init__(self, digit: int):
        self.digit = digit
        super().__init__(f"ring bond {digit} never closed")


class IllegalCharacter(SmilesError):
    """A character that is not part of the grammar, or is illegal where it appears."""

    def __init__(self, position: int, char: str = ""):
        self.position = position
        self.char = char
        super().__init__(f"illegal character {char!r} at position {position}")


class MalformedBracketAtom(SmilesError):
    def __init__(self, position: int, detail: str = ""):
        self.position = position
        super().__init__(f"malformed bracket atom at position {position}" + (f": {detail}" if detail else ""))


class BondOrder(str, Enum):
    SINGLE = "Single"
    DOUBLE = "Double"
    TRIPLE = "Triple"
    AROMATIC = "Aromatic"


_BOND_SYMBOLS = {"-": BondOrder.SINGLE, "=": BondOrder.DOUBLE, "#": BondOrder.TRIPLE, ":": BondOrder.AROMATIC}
_STEREO_BONDS = {"/", "\\"}
_ORGANIC_TWO = ("Cl", "Br")
_ORGANIC_ONE = set("BCNOPSFI")
_AROMATIC_ORGANIC = set("bcnops")
_AROMATIC_BRACKET = {"b", "c", "n", "o", "p", "s", "se", "as"}
_ASCII_DIGITS = set("0123456789")  # str.isdigit admits Unicode digits that int() rejects
_BOND_RANK = {BondOrder.SINGLE: 1, BondOrder.DOUBLE: 2, BondOrder.TRIPLE: 3, BondOrder.AROMATIC: 4}


@dataclass(frozen=True)
class Atom:
    element: str
    aromatic: bool = False
    charge: int = 0
    isotope: int | None = None
    hcount: int | None = None
    chirality: str | None = None

    def invariant(self) -> tuple:
        """Identity tuple used by the canonical key; chirality intentionally absent."""
        return (
            self.element,
            self.aromatic,
            self.charge,
            self.isotope if self.isotope is not None else 0,
            self.hcount if self.hcount is not None else -1,
        )


@dataclass(frozen=True)
class Bond:
    a: int
    b: int
    order: BondOrder
    stereo: str | None = None

    def __post_init__(self) -> None:
        if self.a == self.b:
            raise ValueError("bond endpoints must differ")


@dataclass(frozen=True)
class MolGraph:
    atoms: tuple[Atom, ...]
    bonds: tuple[Bond, ...]
    ring_closures_resolved: bool = True

    def __post_init__(self) -> None:
        n = len(self.atoms)
        for bond in self.bonds:
            if not (0 <= bond.a < n and 0 <= bond.b < n):
                raise ValueError(f"bond endpoint out of range: {bond}")

    def neighbors(self, idx: int) -> list[tuple[int, BondOrder]]:
        out = []
        for bond in self.bonds:
            if bond.a == idx:
                out.append((bond.b, bond.order))
            elif bond.b == idx:
                out.append((bond.a, bond.order))
        return out


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        self.atoms: list[Atom] = []
        self.bonds: list[tuple[int, int, BondOrder, str | None]] = []
        self.bond_keys: set[tuple[int, int]] = set()
        self.prev: int | None = None
        self.pending: tuple[str, int] | None = None  # (symbol, position)
        self.stack: list[int | None] = []
        self.open_rings: dict[int, tuple[int, str | None, int]] = {}  # digit -> (atom, bond symbol, pos)

    def fail_illegal(self) -> None:
        raise IllegalCharacter(self.pos, self.text[self.pos] if self.pos < len(self.text) else "")

    def parse(self) -> MolGraph:
        text = self.text
        if text == "":
            raise EmptyInput("empty SMILES")
        while self.pos < len(text):
            ch = text[self.pos]
            if ch == "(":
                if self.prev is None:
                    raise UnmatchedParenthesis(self.pos)
                self.stack.append(self.prev)
                self.pos += 1
            elif ch == ")":
                if not self.stack or self.pending is not None:
                    raise UnmatchedParenthesis(self.pos)
                self.prev = self.stack.pop()
                self.pos += 1
            elif ch in _BOND_SYMBOLS or ch in _STEREO_BONDS:
                if self.pending is not None or self.prev is None:
                    self.fail_illegal()
                self.pending = (ch, self.pos)
                self.pos += 1
            elif ch == ".":
                if self.pending is not None or self.stack or self.prev is None:
                    self.fail_illegal()
                self.prev = None
                self.pos += 1
            elif ch in _ASCII_DIGITS or ch == "%":
                self.ring_closure()
            elif ch == "[":
                self.add_atom(self.bracket_atom())
            else:
                self.add_atom(self.organic_atom())
        if self.stack:
            raise UnmatchedParenthesis(len(text) - 1)
        if self.pending is not None:
            raise IllegalCharacter(self.pending[1], self.pending[0])
        if self.open_rings:
            raise UnclosedRingBond(min(self.open_rings))
        return MolGraph(
            atoms=tuple(self.atoms),
            bonds=tuple(Bond(a, b, order, stereo) for a, b, order, stereo in self.bonds),
        )

    def organic_atom(self) -> Atom:
        text = self.text
        two = text[self.pos : self.pos + 2]
        if two in _ORGANIC_TWO:
            self.pos += 2
            return Atom(element=two)
        ch = text[self.pos]
        if ch in _ORGANIC_ONE:
            self.pos += 1
            return Atom(element=ch)
        if ch in _AROMATIC_ORGANIC:
            self.pos += 1
            return Atom(element=ch.upper(), aromatic=True)
        self.fail_illegal()
        raise AssertionError("unreachable")

    def bracket_atom(self) -> Atom:
        start = self.pos
        self.pos += 1  # consume '['
        text = self.text
        isotope = None
        digits = ""
        while self.pos < len(text) and text[self.pos] in _ASCII_DIGITS:
            digits += text[self.pos]
            self.pos += 1
        if digits:
            isotope = int(digits)
        aromatic = False
        if text[self.pos : self.pos + 2] in _AROMATIC_BRACKET:
            element = text[self.pos : self.pos + 2].capitalize()
            aromatic = True
            self.pos += 2
        elif self.pos < len(text) and text[self.pos] in _AROMATIC_BRACKET:
            element = text[self.pos].upper()
            aromatic = True
            self.pos += 1
        elif self.pos < len(text) and text[self.pos].isupper():
            element = text[self.pos]
            self.pos += 1
            if self.pos < len(text) and text[self.pos].islower() and text[self.pos] != "h":
                element += text[self.pos]
                self.pos += 1
        else:
            raise MalformedBracketAtom(start, "missing element symbol")
        chirality = None
        if self.pos < len(text) and text[self.pos] == "@":
            chirality = "@"
            self.pos += 1
            if self.pos < len(text) and text[self.pos] == "@":
                chirality = "@@"
                self.pos += 1
        hcount = 0
        if self.pos < len(text) and text[self.pos] == "H":
            self.pos += 1
            digits = ""
            while self.pos < len(text) and text[self.pos] in _ASCII_DIGITS:
                digits += text[self.pos]
                self.pos += 1
            hcount = int(digits) if digits else 1
        charge = 0
        if self.pos < len(text) and text[self.pos] in "+-":
            sign = 1 if text[self.pos] == "+" else -1
            symbol = text[self.pos]
            self.pos += 1
            digits = ""
            while self.pos < len(text) and text[self.pos] in _ASCII_DIGITS:
                digits += text[self.pos]
                self.pos += 1
            if digits:
                charge = sign * int(digits)
            else:
                charge = sign
                while self.pos < len(text) and text[self.pos] == symbol:
                    charge += sign
                    self.pos += 1
        if self.pos >= len(text) or text[self.pos] != "]":
            raise MalformedBracketAtom(start, "missing closing bracket")
        self.pos += 1
        return Atom(
            element=element,
            aromatic=aromatic,
            charge=charge,
            isotope=isotope,
            hcount=hcount,
            chirality=chirality,
        )

    def add_atom(self, atom: Atom) -> None:
        idx = len(self.atoms)
        self.atoms.append(atom)
        if self.prev is not None:
            self.connect(self.prev, idx, self.take_pending())
        elif self.pending is not None:
            raise IllegalCharacter(self.pending[1], self.pending[0])
        self.prev = idx

    def take_pending(self) -> tuple[str, int] | None:
        pending = self.pending
        self.pending = None
        return pending

    def resolve_order(self, a: int, b: int, symbol: str | None) -> tuple[BondOrder, str | None]:
        if symbol in _STEREO_BONDS:
            return BondOrder.SINGLE, symbol
        if symbol is not None:
            return _BOND_SYMBOLS[symbol], None
        if self.atoms[a].aromatic and self.atoms[b].aromatic:
            return BondOrder.AROMATIC, None
        return BondOrder.SINGLE, None

    def connect(self, a: int, b: int, pending: tuple[str, int] | None) -> None:
        key = (min(a, b), max(a, b))
        if key in self.bond_keys:
            self.fail_illegal()
        order, stereo = self.resolve_order(a, b, pending[0] if pending else None)
        self.bond_keys.add(key)
        self.bonds.append((a, b, order, stereo))

    def ring_closure(self) -> None:
        text = self.text
        if self.prev is None:
            self.fail_illegal()
        if text[self.pos] == "%":
            pair = text[self.pos + 1 : self.pos + 3]
            if len(pair) < 2 or any(c not in _ASCII_DIGITS for c in pair):
                self.fail_illegal()
            digit = int(text[self.pos + 1 : self.pos + 3])
            width = 3
        else:
            digit = int(text[self.pos])
            width = 1
        pending = self.take_pending()
        symbol = pending[0] if pending else None
        if digit in self.open_rings:
            other, other_symbol, other_pos = self.open_rings.pop(digit)
            if other == self.prev:
                self.fail_illegal()  # ring closure back to the same atom
            if symbol is not None and other_symbol is not None and symbol != other_symbol:
                self.fail_illegal()  # conflicting bond symbols on the two ring ends
            self.connect(other, self.prev, (symbol or other_symbol, self.pos) if (symbol or other_symbol) else None)
        else:
            self.open_rings[digit] = (self.prev, symbol, self.pos)
        self.pos += width


def parse_smiles(s: str) -> MolGraph:
    """Parse a SMILES string into a molecular graph, or raise a typed SmilesError."""
    return _Parser(s).parse()


def is_valid_smiles(s: str) -> bool:
    try:
        parse_smiles(s)
        return True
    except SmilesError:
        return False


def heavy_atom_count(g: MolGraph) -> int:
    """Non-hydrogen atom count; bracket [H] atoms (any isotope) are hydrogens."""
    return sum(1 for atom in g.atoms if atom.element != "H")


# --- canonical key -----------------------------------------------------------
#
# Iterated neighborhood refinement over an ordered partition: atoms start
# grouped by their invariant tuple, then cells split repeatedly on the multiset
# of (bond order, neighbor cell) signatures. Remaining ties are broken by
# individualizing one atom of the first non-singleton cell per branch and
# taking the lexicographically smallest full encoding, so key equality is
# graph isomorphism (on the invariant fields), not merely a hash agreement.
# Highly symmetric graphs pay for that with a branch per automorphism.


def _refine(g: MolGraph, cells: list[list[int]]) -> list[list[int]]:
    adjacency: list[list[tuple[int, int]]] = [[] for _ in g.atoms]
    for bond in g.bonds:
        adjacency[bond.a].append((_BOND_RANK[bond.order], bond.b))
        adjacency[bond.b].append((_BOND_RANK[bond.order], bond.a))
    while True:
        cell_of = {}
        for ci, cell in enumerate(cells):
            for atom in cell:
                cell_of[atom] = ci
        new_cells: list[list[int]] = []
        changed = False
        for cell in cells:
            if len(cell) == 1:
                new_cells.append(cell)
                continue
            sigs: dict[tuple, list[int]] = {}
            for atom in cell:
                sig = tuple(sorted((rank, cell_of[nbr]) for rank, nbr in adjacency[atom]))
                sigs.setdefault(sig, []).append(atom)
            if len(sigs) == 1:
                new_cells.append(cell)
                continue
            changed = True
            for sig in sorted(sigs):
                new_cells.append(sorted(sigs[sig]))
        cells = new_cells
        if not changed:
            return cells


def _initial_cells(g: MolGraph) -> list[list[int]]:
    groups: dict[tuple, list[int]] = {}
    for idx, atom in enumerate(g.atoms):
        groups.setdefault(atom.invariant(), []).append(idx)
    return [sorted(groups[inv]) for inv in sorted(groups)]


def _encode(g: MolGraph, order: list[int]) -> str:
    rank = {atom: i for i, atom in enumerate(order)}
    atom_part = ";".join(repr(g.atoms[a].invariant()) for a in order)
    edges = sorted(
        (min(rank[b.a], rank[b.b]), max(rank[b.a], rank[b.b]), _BOND_RANK[b.order]) for b in g.bonds
    )
    bond_part = ";".join(f"{i},{j},{o}" for i, j, o in edges)
    return atom_part + "|" + bond_part


def _canonical_encoding(g: MolGraph, cells: list[list[int]]) -> str:
    cells = _refine(g, cells)
    target = next((ci for ci, cell in enumerate(cells) if len(cell) > 1), None)
    if target is None:
        return _encode(g, [cell[0] for cell in cells])
    best: str | None = None
    cell = cells[target]
    for atom in cell:
        rest = [a for a in cell if a != atom]
        branched = cells[:target] + [[atom], rest] + cells[target + 1 :]
        encoding = _canonical_encoding(g, branched)
        if best is None or encoding < best:
            best = encoding
    assert best is not None
    return best


def canonical_key(g: MolGraph) -> str:
    """Deterministic identity key: equal for isomorphic graphs, parse-order invariant."""
    if not g.atoms:
        return "empty"
    encoding = _canonical_encoding(g, _initial_cells(g))
    return hashlib.sha256(encoding.encode("utf-8")).hexdigest()[:32]


def canonical_key_of(s: str) -> str:
    return canonical_key(parse_smiles(s))


# --- writer ------------------------------------------------------------------


def _atom_token(atom: Atom) -> str:
    plain = (
        atom.charge == 0
        and atom.isotope is None
        and atom.hcount is None
        and atom.chirality is None
        and (
            (not atom.aromatic and (atom.element in _ORGANIC_ONE or atom.element in _ORGANIC_TWO))
            or (atom.aromatic and atom.element.lower() in _AROMATIC_ORGANIC)
        )
    )
    if plain:
        return atom.element.lower() if atom.aromatic else atom.element
    token = "["
    if atom.isotope is not None:
        token += str(atom.isotope)
    token += atom.element.lower() if atom.aromatic else atom.element
    if atom.chirality:
        token += atom.chirality
    hcount = atom.hcount if atom.hcount is not None else 0
    if hcount == 1:
        token += "H"
    elif hcount > 1:
        token += f"H{hcount}"
    if atom.charge:
        sign = "+" if atom.charge > 0 else "-"
        magnitude = abs(atom.charge)
        token += sign + (str(magnitude) if magnitude > 1 else "")
    return token + "]"


def _bond_token(order: BondOrder, a: Atom, b: Atom) -> str:
    if order is BondOrder.SINGLE:
        return ""
    if order is BondOrder.AROMATIC:
        return "" if (a.aromatic and b.aromatic) else ":"
    return {BondOrder.DOUBLE: "=", BondOrder.TRIPLE: "#"}[order]


def write_smiles(g: MolGraph) -> str:
    """Serialize a graph back to SMILES (arbitrary but deterministic traversal)."""
    adjacency: dict[int, list[tuple[int, BondOrder]]] = {i: [] for i in range(len(g.atoms))}
    for bond in g.bonds:
        adjacency[bond.a].append((bond.b, bond.order))
        adjacency[bond.b].append((bond.a, bond.order))
    for nbrs in adjacency.values():
        nbrs.sort()

    visited: set[int] = set()
    ring_digits: dict[tuple[int, int], int] = {}
    ring_marks: dict[int, list[tuple[int, BondOrder]]] = {}
    next_digit = [1]
    tree_children: dict[int, list[tuple[int, BondOrder]]] = {}

    def explore(root: int) -> None:
        stack = [(root, None)]
        seen_edges: set[tuple[int, int]] = set()
        order: list[int] = []
        parent: dict[int, int | None] = {root: None}
        visited.add(root)
        order.append(root)
        agenda = [root]
        while agenda:
            cur = agenda.pop()
            for nbr, bond_order in adjacency[cur]:
                edge = (min(cur, nbr), max(cur, nbr))
                if edge in seen_edges:
                    continue
                seen_edges.add(edge)
                if nbr in visited:
                    digit = next_digit[0]
                    next_digit[0] += 1
                    ring_digits[edge] = digit
                    ring_marks.setdefault(cur, []).append((digit, bond_order))
                    ring_marks.setdefault(nbr, []).append((digit, bond_order))
                else:
                    visited.add(nbr)
                    parent[nbr] = cur
                    tree_children.setdefault(cur, []).append((nbr, bond_order))
                    agenda.append(nbr)

    def emit(atom: int) -> str:
        out = _atom_token(g.atoms[atom])
        for digit, bond_order in ring_marks.get(atom, []):
            token = _bond_token(bond_order, g.atoms[atom], g.atoms[atom])
            out += token + (str(digit) if digit < 10 else f"%{digit:02d}")
        children = tree_children.get(atom, [])
        for i, (child, bond_order) in enumerate(children):
            body = _bond_token(bond_order, g.atoms[atom], g.atoms[child]) + emit(child)
            if i < len(children) - 1:
                out += f"({body})"
            else:
                out += body
        return out

    parts = []
    for idx in range(len(g.atoms)):
        if idx not in visited:
            explore(idx)
            parts.append(emit(idx))
    return ".".join(parts)
