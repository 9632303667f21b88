import numpy as np
import pytest

from wepsam.weakset import (WeakLabelRecord, entropy, histogram256,
                            read_manifest, select_low_entropy, write_manifest)


class TestHistogram256:
    def test_constant_zero_map(self):
        counts = histogram256(np.zeros((32, 32)))
        assert counts[0] == 1024
        assert counts[1:].sum() == 0

    def test_two_level_map(self):
        m = np.zeros((32, 32))
        m[16:] = 1.0
        counts = histogram256(m)
        assert counts[0] == 512 and counts[255] == 512

    def test_exact_one_clamps_to_top_bin(self):
        counts = histogram256(np.array([[1.0]]))
        assert counts[255] == 1

    def test_bin_rule(self):
        # v lands in min(floor(256 v), 255)
        counts = histogram256(np.array([[0.0, 1 / 256, 0.999, 0.5]]))
        assert counts[0] == 1 and counts[1] == 1
        assert counts[255] == 1 and counts[128] == 1

    def test_counts_sum_to_pixels(self):
        rng = np.random.default_rng(0)
        m = rng.random((13, 7))
        assert histogram256(m).sum() == m.size

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            histogram256(np.array([[1.2]]))
        with pytest.raises(ValueError):
            histogram256(np.array([[-0.1]]))


class TestEntropy:
    def test_constant_map_zero_bits(self):
        assert entropy(np.full((32, 32), 0.7)) == 0.0

    def test_half_half_one_bit(self):
        m = np.zeros((32, 32))
        m[:16] = 1.0
        assert entropy(m) == pytest.approx(1.0, abs=1e-12)

    def test_uniform_256_bins_eight_bits(self):
        # 16x16 map hitting every bin exactly once
        values = np.arange(256) / 256.0 + 1 / 512.0
        assert entropy(values.reshape(16, 16)) == pytest.approx(8.0, abs=1e-12)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            m = rng.random((8, 8))
            shuffled = rng.permutation(m.ravel()).reshape(8, 8)
            assert entropy(m) == entropy(shuffled)

    def test_reflection_symmetry_two_level(self):
        m = np.full((6, 6), 0.2)
        m[:2] = 0.9
        assert entropy(m) == entropy(1.0 - m)


class TestSelectLowEntropy:
    def make(self, name, bits):
        return WeakLabelRecord(name, f"{name}.png", f"{name}.pgm", bits)

    def test_k_zero(self):
        assert select_low_entropy([self.make("a", 1.0)], 0) == []

    def test_sorted_prefix(self):
        records = [self.make("a", 3.1), self.make("b", 0.0), self.make("c", 2.5)]
        picked = select_low_entropy(records, 2)
        assert [r.image_id for r in picked] == ["b", "c"]

    def test_tie_breaks_on_image_id(self):
        records = [self.make("z", 1.0), self.make("a", 1.0)]
        assert [r.image_id for r in select_low_entropy(records, 2)] == ["a", "z"]

    def test_k_larger_than_input(self):
        records = [self.make("a", 1.0)]
        assert len(select_low_entropy(records, 10)) == 1

    def test_selection_dominates_excluded(self):
        rng = np.random.default_rng(2)
        records = [self.make(f"r{i}", float(rng.random())) for i in range(30)]
        picked = select_low_entropy(records, 10)
        excluded = {r.image_id for r in records} - {r.image_id for r in picked}
        worst_picked = max(r.entropy_bits for r in picked)
        best_excluded = min(r.entropy_bits for r in records
                            if r.image_id in excluded)
        assert worst_picked <= best_excluded

    def test_negative_k_rejected(self):
        with pytest.raises(ValueError):
            select_low_entropy([], -1)


class TestManifest:
    def test_roundtrip(self, tmp_path):
        records = [
            WeakLabelRecord("a", "/x/a.png", "/y/a.pgm", 1.5, "train"),
            WeakLabelRecord("b", "/x/b.png", "/y/b.pgm", None, "val"),
        ]
        path = tmp_path / "m.jsonl"
        write_manifest(path, records)
        assert read_manifest(path) == records

    def test_duplicate_ids_rejected(self, tmp_path):
        records = [WeakLabelRecord("a", "p", "q", 1.0),
                   WeakLabelRecord("a", "r", "s", 2.0)]
        with pytest.raises(ValueError):
            write_manifest(tmp_path / "m.jsonl", records)

    def test_bad_json_line(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text('{"image_id": "a", "image_path": "p", "map_path": "q"}\n'
                        "not json\n")
        with pytest.raises(ValueError):
            read_manifest(path)
