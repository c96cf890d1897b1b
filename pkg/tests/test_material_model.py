import numpy as np
import pytest

from specwave.material_model import (
    ACOUSTIC,
    ELASTIC,
    InvalidMaterialError,
    MaterialError,
    TissueProperties,
    builtin_dolphin_table,
    classify_hu,
    domain_kind,
    parse_smat,
    read_smat,
    snap_hu,
    write_smat,
)


def test_builtin_table_values():
    t = builtin_dolphin_table()
    bone = t.by_name("bone")
    assert (bone.rho, bone.vp, bone.vs) == (2035, 3400, 1817)
    water = t.by_name("water")
    assert water.vs == 0
    assert domain_kind(water) == ACOUSTIC
    melon = t.by_name("melon")
    assert (melon.rho, melon.vp, melon.vs) == (884, 1316, 184)
    soft = t.by_name("soft_tissue")
    assert (soft.rho, soft.vp, soft.vs, soft.hu_min, soft.hu_max) == (1013, 1536, 215, -35, 110)
    fat = t.by_name("acoustic_fat")
    assert (fat.rho, fat.vp, fat.vs, fat.hu_min, fat.hu_max) == (928, 1390, 186, -115, -35)


def test_classify_hu():
    t = builtin_dolphin_table()
    assert [x.name for x in classify_hu(t, 1000)] == ["bone"]
    # fat and melon share the -115..-35 range; the ambiguity is real
    assert [x.name for x in classify_hu(t, -50)] == ["acoustic_fat", "melon"]
    assert classify_hu(t, 150) == []  # gap between soft tissue and bone
    assert [x.name for x in classify_hu(t, -3000)] == ["water"]


def test_snap_hu_bridges_gaps():
    t = builtin_dolphin_table()
    assert snap_hu(t, 120).name == "soft_tissue"
    assert snap_hu(t, 230).name == "bone"
    assert snap_hu(t, 1000).name == "bone"


def test_domain_kind():
    assert domain_kind(TissueProperties("syn", 1000, 1000, 0)) == ACOUSTIC
    assert domain_kind(builtin_dolphin_table().by_name("soft_tissue")) == ELASTIC


def test_round_trip_hu_midpoints():
    t = builtin_dolphin_table()
    for props in t.tissues:
        if props.hu_min is not None and props.hu_max is not None:
            mid = 0.5 * (props.hu_min + props.hu_max)
            assert props in classify_hu(t, mid)


def test_water_impedance_oracle():
    water = builtin_dolphin_table().by_name("water")
    assert water.impedance == 1028 * 1480 == 1_521_440


def test_invariants_enforced():
    with pytest.raises(MaterialError):
        TissueProperties("bad", -1.0, 1500, 0)
    with pytest.raises(MaterialError):
        TissueProperties("bad", 1000, 1500, 1500)  # vs >= vp
    # vs = 0 classified acoustic by definition
    assert domain_kind(TissueProperties("f", 1000, 1500, 0)) == ACOUSTIC


def test_lame_parameters():
    bone = builtin_dolphin_table().by_name("bone")
    lam = 2035 * (3400**2 - 2 * 1817**2)
    mu = 2035 * 1817**2
    assert abs(bone.lam - lam) < 1e-6 * abs(lam)
    assert abs(bone.mu - mu) < 1e-6 * mu
    # vp^2 < 2 vs^2 is rejected when lambda is requested
    odd = TissueProperties("odd", 1000, 1500, 1200)
    with pytest.raises(InvalidMaterialError):
        _ = odd.lam


def test_check_mesh_ids():
    t = builtin_dolphin_table()
    t.check_mesh(np.array([1, 4, 5]))
    with pytest.raises(MaterialError, match="99"):
        t.check_mesh(np.array([1, 99]))


def test_smat_roundtrip(tmp_path):
    t = builtin_dolphin_table()
    path = tmp_path / "m.smat"
    write_smat(t, path)
    back = read_smat(path)
    assert len(back) == 5
    for mid, props in t.by_id.items():
        got = back.get(mid)
        assert got == props


def test_smat_parse_errors():
    with pytest.raises(MaterialError):
        parse_smat("1 water 1028 1480\n")  # 4 fields
    with pytest.raises(MaterialError):
        parse_smat("")
    with pytest.raises(MaterialError):
        parse_smat("1 a 1000 1500 0\n1 b 1000 1500 0\n")  # duplicate id
