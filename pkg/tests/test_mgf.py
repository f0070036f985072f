import pytest

from specnovo.errors import DomainError, ParseError
from specnovo.mgf import read_mgf

BLOCK = """BEGIN IONS
TITLE=phenol
PEPMASS=95.0491 1200
CHARGE=1+
FORMULA=C6H6O
SMILES=Oc1ccccc1
ADDUCT=[M+H]+
COLLISION_ENERGY=20
95.0491 100
77.0386\t31.5
END IONS
"""


def write(tmp_path, text):
    p = tmp_path / "x.mgf"
    p.write_text(text)
    return p


def test_block(tmp_path):
    (rec,) = read_mgf(write(tmp_path, "MASS=Monoisotopic\n" + BLOCK), source="lib")
    assert rec.smiles == "Oc1ccccc1" and rec.formula.hill() == "C6H6O"
    assert [(p.mz, p.intensity) for p in rec.spectrum.peaks] == [(77.0386, 31.5), (95.0491, 100.0)]
    assert rec.spectrum.collision_energy == 20.0 and rec.spectrum.source == "lib"
    assert rec.extra == {"title": "phenol", "precursor_mz": 95.0491}


def test_multiple_and_unlabeled(tmp_path):
    text = BLOCK + "\nBEGIN IONS\nFORMULA=CH4O\n33.0 10\nEND IONS\n"
    recs = read_mgf(write(tmp_path, text))
    assert len(recs) == 2 and recs[1].smiles is None


@pytest.mark.parametrize("text,err,line", [
    ("BEGIN IONS\n95.0 1\nEND IONS\n", ParseError, "line 1"),
    ("BEGIN IONS\nFORMULA=CH4\n95.0\nEND IONS\n", ParseError, "line 3"),
    ("BEGIN IONS\nFORMULA=CH4\n95.0 1\n", ParseError, "not closed"),
    ("END IONS\n", ParseError, "line 1"),
    ("BEGIN IONS\nFORMULA=CH4\nCHARGE=1-\n95.0 1\nEND IONS\n", DomainError, "negative"),
])
def test_errors(tmp_path, text, err, line):
    with pytest.raises(err, match=line):
        read_mgf(write(tmp_path, text))
