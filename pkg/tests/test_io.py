import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from spectral_refine.io import (SCHEMA, RunConfig, Sfc1Error, decode_sfc1, encode_sfc1, fmt, load_config,
                                parse_config, read_metadata, read_sfc1, write_csv, write_metadata, write_sfc1)

shapes = hnp.array_shapes(min_dims=0, max_dims=4, min_side=0, max_side=5)
reals = hnp.arrays(np.float64, shapes, elements=st.floats(allow_nan=True, allow_infinity=True))
complexes = hnp.arrays(np.complex128, shapes, elements=st.complex_numbers(allow_nan=False, allow_infinity=False))


class TestSfc1:
    @given(st.dictionaries(st.text(min_size=0, max_size=8), st.one_of(reals, complexes), max_size=4))
    def test_round_trip_bit_exact(self, arrays):
        back = decode_sfc1(encode_sfc1(arrays))
        assert list(back) == list(arrays)
        for k, v in arrays.items():
            assert back[k].dtype == v.dtype and back[k].shape == v.shape
            assert back[k].tobytes() == v.tobytes()

    @given(st.one_of(reals, complexes))
    def test_encoding_is_deterministic(self, a):
        assert encode_sfc1({"a": a}) == encode_sfc1({"a": a.copy()})

    def test_fixture_bytes(self):
        # hand-assembled little-endian container: one 2x1 f64 array named "u"
        expected = (b"SFC1" + struct.pack("<II", 1, 1) + struct.pack("<I", 1) + b"u"
                    + bytes([1, 2]) + struct.pack("<QQ", 2, 1) + struct.pack("<dd", 1.5, -2.0))
        assert encode_sfc1({"u": np.array([[1.5], [-2.0]])}) == expected
        np.testing.assert_array_equal(decode_sfc1(expected)["u"], [[1.5], [-2.0]])

    def test_complex_fixture(self):
        buf = encode_sfc1({"z": np.array([1 + 2j])})
        assert buf[-16:] == struct.pack("<dd", 1.0, 2.0)
        assert buf[4 + 8 + 4 + 1] == 2

    def test_integers_stored_as_f64(self):
        back = decode_sfc1(encode_sfc1({"i": np.arange(3)}))
        assert back["i"].dtype == np.float64

    def test_multiple_arrays_keep_order(self, tmp_path):
        arrays = {"b": np.zeros(2), "a": np.ones((1, 3), complex), "c": np.array(4.0)}
        write_sfc1(tmp_path / "x.sfc1", arrays)
        assert list(read_sfc1(tmp_path / "x.sfc1")) == ["b", "a", "c"]

    def test_bad_magic(self):
        buf = bytearray(encode_sfc1({"a": np.zeros(1)}))
        buf[:4] = b"NOPE"
        with pytest.raises(Sfc1Error, match="magic"):
            decode_sfc1(bytes(buf))

    def test_bad_version(self):
        buf = bytearray(encode_sfc1({"a": np.zeros(1)}))
        buf[4:8] = struct.pack("<I", 2)
        with pytest.raises(Sfc1Error, match="version"):
            decode_sfc1(bytes(buf))

    def test_truncated(self):
        buf = encode_sfc1({"a": np.zeros(4)})
        with pytest.raises(Sfc1Error, match="truncated"):
            decode_sfc1(buf[:-3])

    def test_trailing_bytes(self):
        with pytest.raises(Sfc1Error):
            decode_sfc1(encode_sfc1({"a": np.zeros(1)}) + b"\0")

    def test_unknown_dtype_code(self):
        buf = bytearray(encode_sfc1({"a": np.zeros(1)}))
        buf[4 + 8 + 4 + 1] = 9
        with pytest.raises(Sfc1Error, match="dtype"):
            decode_sfc1(bytes(buf))

    def test_duplicate_names(self):
        one = encode_sfc1({"a": np.zeros(1)})[12:]
        with pytest.raises(Sfc1Error, match="duplicate"):
            decode_sfc1(b"SFC1" + struct.pack("<II", 1, 2) + one + one)

    def test_rejects_object_arrays(self):
        with pytest.raises(Sfc1Error):
            encode_sfc1({"s": np.array(["x"])})


class TestCsv:
    def test_full_precision_and_newlines(self, tmp_path):
        write_csv(tmp_path / "m.csv", ["k", "v"], [[1, 0.1], [2, 1 / 3]])
        raw = (tmp_path / "m.csv").read_bytes()
        assert raw == b"k,v\n1,0.10000000000000001\n2,0.33333333333333331\n"

    @given(st.floats(allow_nan=False))
    def test_fmt_round_trips(self, x):
        assert float(fmt(x)) == x

    def test_metadata_round_trip(self, tmp_path):
        write_metadata(tmp_path / "meta.txt", {"seed": 3, "dt": 0.05, "kind": "grf"})
        assert read_metadata(tmp_path / "meta.txt") == {"seed": "3", "dt": "0.050000000000000003", "kind": "grf"}


class TestConfig:
    def test_defaults(self):
        cfg = RunConfig()
        for sec, keys in SCHEMA.items():
            assert {k: d for k, (_, d) in keys.items()} == cfg[sec]
        assert cfg["finetune"]["iters"] == 100 and cfg["finetune"]["lr"] == 0.1

    def test_parse_and_types(self):
        cfg = parse_config("[grid]\nn=32\nL=6.5\n[model]\nhelmholtz=yes\n[ic]\ntau=none\n")
        assert cfg["grid"]["n"] == 32 and cfg["grid"]["L"] == 6.5
        assert cfg["model"]["helmholtz"] is True and cfg["ic"]["tau"] is None
        assert cfg["solver"]["scheme"] == "rk2_cn"

    def test_unknown_key(self):
        with pytest.raises(ValueError, match="grid.size"):
            parse_config("[grid]\nsize=3\n")

    def test_unknown_section(self):
        with pytest.raises(ValueError, match="optimizer"):
            parse_config("[optimizer]\nlr=1\n")

    def test_bad_value(self):
        with pytest.raises(ValueError, match="solver.dt"):
            parse_config("[solver]\ndt=fast\n")

    def test_text_round_trip(self, tmp_path):
        cfg = parse_config("[finetune]\nmode=guaranteed\ntol=1e-4\n[ic]\nenergy=none\n")
        (tmp_path / "c.txt").write_text(cfg.to_text())
        assert load_config(tmp_path / "c.txt").values == cfg.values
        assert load_config(None).values == RunConfig().values
