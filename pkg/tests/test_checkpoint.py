import json
import struct

import numpy as np
import pytest

from chela import checkpoint as ckpt
from chela.layer import ModelConfig, init_chela_params
from chela.rng import Rng
from chela.training import OptimState


def small_setup(seed=0):
    cfg = ModelConfig(depth=1, d_model=8, max_len=8, vocab_size=4, chunk=4, seed=seed)
    params = init_chela_params(cfg)
    state = OptimState.zeros_like(params)
    state.step = 7
    for k in state.m:
        state.m[k] = Rng(1).normal(state.m[k].shape) * 0.01
    return cfg, params, state


class TestRoundTrip:
    def test_params_survive_at_single_precision(self, tmp_path):
        cfg, params, state = small_setup()
        path = str(tmp_path / "model.ckpt")
        ckpt.save_checkpoint(path, params, state, cfg, rng_state=123, step=42)
        loaded, moments, cfg2, rng_state, step = ckpt.load_checkpoint(path)
        assert cfg2 == cfg and rng_state == 123 and step == 42
        assert moments["step"] == 7
        assert loaded.keys() == params.keys()
        for k in params:
            want = params[k].astype(np.float32).astype(np.float64)
            assert np.array_equal(loaded[k], want)

    def test_moments_roundtrip_bit_identical(self, tmp_path):
        cfg, params, state = small_setup(1)
        path = str(tmp_path / "m.ckpt")
        ckpt.save_checkpoint(path, params, state, cfg)
        _, moments, *_ = ckpt.load_checkpoint(path)
        for k in state.m:
            want = state.m[k].astype(np.float32).astype(np.float64)
            assert np.array_equal(moments["m"][k], want)
        st = ckpt.load_optim_state(moments)
        assert st.step == 7 and st.m.keys() == state.m.keys()

    def test_save_load_save_is_byte_identical(self, tmp_path):
        cfg, params, state = small_setup(2)
        p1 = str(tmp_path / "a.ckpt")
        p2 = str(tmp_path / "b.ckpt")
        ckpt.save_checkpoint(p1, params, state, cfg, rng_state=5, step=1)
        loaded, moments, cfg2, rng_state, step = ckpt.load_checkpoint(p1)
        ckpt.save_checkpoint(p2, loaded, ckpt.load_optim_state(moments), cfg2,
                             rng_state=rng_state, step=step)
        assert open(p1, "rb").read() == open(p2, "rb").read()

    def test_without_optimizer_state(self, tmp_path):
        cfg, params, _ = small_setup(3)
        path = str(tmp_path / "bare.ckpt")
        ckpt.save_checkpoint(path, params, None, cfg)
        loaded, moments, *_ = ckpt.load_checkpoint(path)
        assert loaded.keys() == params.keys()
        assert moments["m"] == {} and moments["step"] == 0

    def test_no_temp_file_left_behind(self, tmp_path):
        cfg, params, state = small_setup(4)
        ckpt.save_checkpoint(str(tmp_path / "c.ckpt"), params, state, cfg)
        leftovers = [p.name for p in tmp_path.iterdir() if p.name.startswith(".ckpt-")]
        assert leftovers == []


class TestManifestLayout:
    def test_offsets_are_contiguous_and_sorted_by_name(self, tmp_path):
        cfg, params, state = small_setup(5)
        path = str(tmp_path / "d.ckpt")
        ckpt.save_checkpoint(path, params, state, cfg)
        raw = open(path, "rb").read()
        (hlen,) = struct.unpack("<I", raw[6:10])
        manifest = json.loads(raw[10:10 + hlen])
        names = [e["name"] for e in manifest["tensors"]]
        assert names == sorted(names)
        offset = 0
        for e in manifest["tensors"]:
            assert e["offset"] == offset
            assert e["nbytes"] == int(np.prod(e["shape"])) * 4
            assert e["dtype"] == "float32"
            offset += e["nbytes"]
        assert len(raw) == 10 + hlen + offset

    def test_payload_value_recoverable_by_manual_decode(self, tmp_path):
        cfg, params, _ = small_setup(6)
        path = str(tmp_path / "e.ckpt")
        ckpt.save_checkpoint(path, params, None, cfg)
        raw = open(path, "rb").read()
        (hlen,) = struct.unpack("<I", raw[6:10])
        manifest = json.loads(raw[10:10 + hlen])
        entry = next(e for e in manifest["tensors"] if e["name"] == "embed")
        start = 10 + hlen + entry["offset"]
        arr = np.frombuffer(raw[start:start + entry["nbytes"]], dtype="<f4")
        assert np.array_equal(arr, params["embed"].astype(np.float32).ravel())


class TestCorruption:
    def _saved(self, tmp_path):
        cfg, params, state = small_setup(7)
        path = tmp_path / "f.ckpt"
        ckpt.save_checkpoint(str(path), params, state, cfg)
        return path

    def test_bad_magic(self, tmp_path):
        path = self._saved(tmp_path)
        raw = bytearray(path.read_bytes())
        raw[:6] = b"NOTCKP"
        path.write_bytes(bytes(raw))
        with pytest.raises(ckpt.BadMagicError):
            ckpt.load_checkpoint(str(path))

    def test_header_json_garbage(self, tmp_path):
        path = self._saved(tmp_path)
        raw = bytearray(path.read_bytes())
        raw[10:14] = b"\xff\xfe\x00{"
        path.write_bytes(bytes(raw))
        with pytest.raises(ckpt.ManifestError):
            ckpt.load_checkpoint(str(path))

    def test_header_length_past_eof(self, tmp_path):
        path = self._saved(tmp_path)
        raw = bytearray(path.read_bytes())
        raw[6:10] = struct.pack("<I", 2 ** 31)
        path.write_bytes(bytes(raw))
        with pytest.raises(ckpt.ManifestError):
            ckpt.load_checkpoint(str(path))

    def test_truncated_payload(self, tmp_path):
        path = self._saved(tmp_path)
        raw = path.read_bytes()
        path.write_bytes(raw[:-100])
        with pytest.raises(ckpt.TruncatedPayloadError):
            ckpt.load_checkpoint(str(path))

    def test_shape_nbytes_mismatch(self, tmp_path):
        path = self._saved(tmp_path)
        raw = path.read_bytes()
        (hlen,) = struct.unpack("<I", raw[6:10])
        manifest = json.loads(raw[10:10 + hlen])
        manifest["tensors"][0]["nbytes"] += 4
        header = json.dumps(manifest).encode()
        path.write_bytes(raw[:6] + struct.pack("<I", len(header)) + header
                         + raw[10 + hlen:])
        with pytest.raises(ckpt.ManifestError):
            ckpt.load_checkpoint(str(path))

    def test_overlapping_offsets(self, tmp_path):
        path = self._saved(tmp_path)
        raw = path.read_bytes()
        (hlen,) = struct.unpack("<I", raw[6:10])
        manifest = json.loads(raw[10:10 + hlen])
        manifest["tensors"][1]["offset"] = manifest["tensors"][0]["offset"]
        header = json.dumps(manifest).encode()
        path.write_bytes(raw[:6] + struct.pack("<I", len(header)) + header
                         + raw[10 + hlen:])
        with pytest.raises(ckpt.ManifestError):
            ckpt.load_checkpoint(str(path))

    def test_all_errors_share_base_class(self):
        for exc in (ckpt.BadMagicError, ckpt.ManifestError, ckpt.TruncatedPayloadError):
            assert issubclass(exc, ckpt.CheckpointError)
