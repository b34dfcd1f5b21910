import pytest
import torch

from conftest import TINY_MODEL
from t2vlab.checkpoint import (
    load_checkpoint,
    load_tensors,
    save_checkpoint,
    save_tensors,
    spatial_param_hash,
)
from t2vlab.data import SyntheticClipDataset
from t2vlab.diffusion import make_linear_beta_schedule
from t2vlab.errors import ConfigError, IntegrityError
from t2vlab.losses import NegativeQueue
from t2vlab.model import ModelConfig, build_model
from t2vlab.training import TrainConfig, sample_batch, train_step


class TestTensorFile:
    def test_round_trip_bit_exact(self, tmp_path):
        gen = torch.Generator().manual_seed(0)
        tensors = {
            "a.weight": torch.randn(3, 4, generator=gen),
            "b.bias": torch.randn(7, generator=gen).double(),
            "c.ids": torch.arange(5),
            "d.scalar": torch.tensor(3.25),
        }
        path = tmp_path / "group.bin"
        save_tensors(path, tensors)
        loaded = load_tensors(path)
        assert set(loaded) == set(tensors)
        for name in tensors:
            assert loaded[name].dtype == tensors[name].dtype
            assert torch.equal(loaded[name], tensors[name])

    def test_truncated_file_named(self, tmp_path):
        path = tmp_path / "x.bin"
        save_tensors(path, {"w": torch.randn(4, 4)})
        payload = path.read_bytes()
        path.write_bytes(payload[: len(payload) - 10])
        with pytest.raises(IntegrityError, match="x.bin"):
            load_tensors(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "y.bin"
        path.write_bytes(b"JUNKJUNKJUNK")
        with pytest.raises(IntegrityError, match="magic"):
            load_tensors(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(IntegrityError, match="missing"):
            load_tensors(tmp_path / "absent.bin")

    def test_trailing_bytes_rejected(self, tmp_path):
        path = tmp_path / "z.bin"
        save_tensors(path, {"w": torch.randn(2)})
        path.write_bytes(path.read_bytes() + b"x")
        with pytest.raises(IntegrityError, match="trailing"):
            load_tensors(path)


class TestCheckpointRoundTrip:
    def build(self, seed=17):
        model = build_model(ModelConfig(**TINY_MODEL), seed=seed)
        model.freeze_spatial()
        queue = NegativeQueue(8)
        gen = torch.Generator().manual_seed(1)
        queue.push(torch.randn(5, 4, generator=gen), [0, 1, 2, 0, 1])
        return model, queue

    def test_parameters_bit_equal(self, tmp_path):
        model, queue = self.build()
        schedule = make_linear_beta_schedule(50, 0.01, 0.2)
        save_checkpoint(model, queue, 42, tmp_path / "ck", schedule)
        loaded = load_checkpoint(tmp_path / "ck")
        for (na, pa), (nb, pb) in zip(
            model.named_parameters(), loaded.model.named_parameters()
        ):
            assert na == nb
            assert torch.equal(pa, pb)
        assert loaded.step == 42
        assert loaded.model.spatial_frozen
        assert loaded.schedule.T == 50
        assert loaded.schedule.betas[0] == pytest.approx(0.01)
        assert spatial_param_hash(loaded.model) == spatial_param_hash(model)

    def test_queue_restored_in_order(self, tmp_path):
        model, queue = self.build()
        save_checkpoint(model, queue, 1, tmp_path / "ck")
        loaded = load_checkpoint(tmp_path / "ck")
        assert len(loaded.queue) == len(queue)
        assert torch.equal(loaded.queue.entries(), queue.entries())
        assert loaded.queue.video_ids() == queue.video_ids()
        assert loaded.queue.capacity == queue.capacity

    def test_no_queue_checkpoint(self, tmp_path):
        model, _ = self.build()
        save_checkpoint(model, None, 7, tmp_path / "ck")
        loaded = load_checkpoint(tmp_path / "ck")
        assert loaded.queue is None

    def test_config_mismatch_rejected(self, tmp_path):
        model, queue = self.build()
        save_checkpoint(model, queue, 1, tmp_path / "ck")
        other = ModelConfig(**{**TINY_MODEL, "K": 1})
        with pytest.raises(ConfigError, match="K"):
            load_checkpoint(tmp_path / "ck", expected_config=other)
        load_checkpoint(tmp_path / "ck", expected_config=model.config)

    def test_missing_metadata(self, tmp_path):
        with pytest.raises(IntegrityError, match="metadata"):
            load_checkpoint(tmp_path / "nothing")

    def test_corrupt_group_file_named(self, tmp_path):
        model, queue = self.build()
        save_checkpoint(model, queue, 1, tmp_path / "ck")
        target = tmp_path / "ck" / "temporal.bin"
        target.write_bytes(target.read_bytes()[:20])
        with pytest.raises(IntegrityError, match="temporal.bin"):
            load_checkpoint(tmp_path / "ck")


class TestResumeDeterminism:
    def test_loaded_step_reproduces_uninterrupted_breakdown(self, tmp_path):
        """Checkpoint after step k, reload, run step k+1: bit-equal LossBreakdown."""
        schedule = make_linear_beta_schedule(50, 0.01, 0.2)
        dataset = SyntheticClipDataset(3, F=4, H=16, W=16, speed=1.0, seed=0)
        cfg = TrainConfig(batch_size=2, pretrain_steps=2, steps=4, seed=31)

        model = build_model(ModelConfig(**TINY_MODEL), seed=8)
        model.freeze_spatial()
        queue = NegativeQueue(16)
        opt = torch.optim.Adam(model.trainable_parameters(), lr=cfg.lr_start)
        history = []
        for step in range(3):
            batch = sample_batch(dataset, cfg.batch_size, gen_for(cfg.seed, step))
            history.append(train_step(model, batch, schedule, queue, cfg, step, opt))
            if step == 1:
                save_checkpoint(model, queue, step + 1, tmp_path / "mid", schedule)

        loaded = load_checkpoint(tmp_path / "mid")
        opt2 = torch.optim.Adam(loaded.model.trainable_parameters(), lr=cfg.lr_start)
        batch = sample_batch(dataset, cfg.batch_size, gen_for(cfg.seed, 2))
        replay = train_step(loaded.model, batch, schedule, loaded.queue, cfg, 2, opt2)
        assert replay == history[2]


def gen_for(seed, step):
    from t2vlab.training import _gen

    return _gen(seed, step, 0)
