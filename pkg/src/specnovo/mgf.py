"""Minimal MGF reader producing SpectrumRecords.

Only ``BEGIN IONS``/``END IONS`` blocks are understood. Inside a block,
``KEY=value`` lines are metadata and two-number lines are peaks. Keys used:
``FORMULA`` (required, the JSONL schema needs it), ``SMILES``, ``ADDUCT`` or
``PRECURSOR_TYPE``, ``COLLISION_ENERGY``, ``TITLE``. ``PEPMASS`` and
``CHARGE`` are kept as extra fields; positive charge only.
"""

from __future__ import annotations

from .errors import DomainError, ParseError
from .spectra import Spectrum, SpectrumRecord, parse_adduct, parse_formula

_ADDUCT_KEYS = ("ADDUCT", "PRECURSOR_TYPE", "PRECURSORTYPE")


def _number(text, lineno, what):
    try:
        return float(text.split()[0])
    except (ValueError, IndexError):
        raise ParseError(f"line {lineno}: bad {what} {text!r}", lineno) from None


def _finish(meta, peaks, start, source):
    if "FORMULA" not in meta:
        raise ParseError(f"line {start}: ion block has no FORMULA", start)
    charge = meta.get("CHARGE", "1+").strip()
    if charge.endswith("-") or charge.startswith("-"):
        raise DomainError(f"line {start}: negative ion mode is not supported")
    try:
        formula = parse_formula(meta["FORMULA"])
    except ParseError as exc:
        exc.args = (f"line {start}: {exc.args[0] if exc.args else exc}",)
        raise
    adduct = next((meta[k] for k in _ADDUCT_KEYS if k in meta), "H+")
    ce = meta.get("COLLISION_ENERGY")
    ce = _number(ce, start, "COLLISION_ENERGY") if ce else None
    spectrum = Spectrum(tuple(peaks), parse_adduct(adduct), ce, meta.get("SOURCE", source))
    extra = {}
    if "TITLE" in meta:
        extra["title"] = meta["TITLE"]
    if "PEPMASS" in meta:
        extra["precursor_mz"] = _number(meta["PEPMASS"], start, "PEPMASS")
    return SpectrumRecord(spectrum, formula, meta.get("SMILES") or None, extra)


def iter_mgf(path, source: str = ""):
    meta, peaks, start = None, [], 0
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line[0] in "#;!":
                continue
            if line.upper() == "BEGIN IONS":
                if meta is not None:
                    raise ParseError(f"line {lineno}: BEGIN IONS inside an open block", lineno)
                meta, peaks, start = {}, [], lineno
            elif line.upper() == "END IONS":
                if meta is None:
                    raise ParseError(f"line {lineno}: END IONS without BEGIN IONS", lineno)
                yield _finish(meta, peaks, start, source)
                meta = None
            elif meta is None:
                continue  # global header parameters
            elif "=" in line and not line[0].isdigit():
                key, value = line.split("=", 1)
                meta[key.strip().upper()] = value.strip()
            else:
                parts = line.split()
                if len(parts) < 2:
                    raise ParseError(f"line {lineno}: expected 'mz intensity', got {line!r}", lineno)
                try:
                    mz, inten = float(parts[0]), float(parts[1])
                except ValueError:
                    raise ParseError(f"line {lineno}: expected 'mz intensity', got {line!r}", lineno) from None
                if mz <= 0 or inten < 0:
                    raise DomainError(f"line {lineno}: bad peak {line!r}")
                peaks.append((mz, inten))
    if meta is not None:
        raise ParseError(f"line {start}: ion block not closed", start)


def read_mgf(path, source: str = "") -> list:
    return list(iter_mgf(path, source))
