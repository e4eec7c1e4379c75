"""End-to-end training of the closed-loop encoder/channel/decoder."""
import copy
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from fblab import autodiff as ad
from fblab.channel import (PURPOSE_FREEZE, PURPOSE_TRAIN, NoiseParams, channel_noise,
                           purpose_stream, random_bits)
from fblab.config import TrainConfig
from fblab.decoder import DecoderModel, bits_to_index, decoder_logits, harden
from fblab.encoder import (EncoderModel, InitStream, encode_episode, freeze_norm_stats,
                           project_power_weights)
from fblab.optim import TrainingDivergence, adam_init, adam_step, clip_global_norm, lr_at_epoch

log = logging.getLogger(__name__)


def sample_ids(purpose, start, count):
    base = purpose_stream(purpose, start)
    return np.arange(base, base + count, dtype=np.uint64)


def generate_batch(seed, config, ids):
    """Message bits and channel noise for the given per-sample stream ids."""
    params = NoiseParams(config.sigma1_sq, config.sigma2_sq)
    bits = random_bits(seed, ids, config.K)
    n1, n2 = channel_noise(seed, ids, config.N, params)
    return bits, n1, n2


def _loss(logits, bits, head):
    if head == "softmax":
        return ad.softmax_cross_entropy(logits, bits_to_index(bits))
    return ad.sigmoid_bce(logits, bits)


@dataclass
class FeedbackCode:
    """A trained (or trainable) encoder/decoder pair plus the config that built it."""

    encoder: EncoderModel
    decoder: DecoderModel
    config: TrainConfig

    kind = "neural"

    @classmethod
    def init(cls, config):
        config.validate()
        init = InitStream(config.seed)
        enc = EncoderModel.init(config.K, config.N, config.enc_hidden, config.enc_layers,
                                config.enc_mode, config.power_layer, init=init)
        enc.stop_feedback_grad = config.stop_feedback_grad
        dec = DecoderModel.init(config.K, config.N, config.dec_hidden, config.dec_layers,
                                config.direction, config.merge_case, config.head, init=init)
        return cls(enc, dec, config)

    @property
    def K(self):
        return self.config.K

    @property
    def N(self):
        return self.config.N

    @property
    def uses_feedback(self):
        return self.encoder.mode == "feedback"

    def named_parameters(self):
        out = self.encoder.named_parameters()
        out.update(self.decoder.named_parameters())
        return out

    def parameters(self):
        return list(self.named_parameters().values())

    @property
    def power_weights(self):
        return self.encoder.power_w if "enc.power_w" in self.encoder.named_parameters() else None

    def loss(self, bits, n1, n2):
        """Mean training loss on a batch using live normalisation; returns (loss, hard bits)."""
        trace = encode_episode(bits, n1, n2, self.encoder, "batch")
        logits = decoder_logits(trace.y_values, self.decoder)
        return _loss(logits, bits, self.decoder.head), self._harden(logits.data)

    def _harden(self, logits):
        if self.decoder.head == "softmax":
            return harden(logits, "softmax", self.K)
        return (logits > 0).astype(np.uint8)

    def freeze(self, bits, n1, n2):
        freeze_norm_stats(self.encoder, bits, n1, n2)

    def transmit(self, bits, n1, n2):
        """Inference with frozen statistics: (decoded bits, transmitted x)."""
        with ad.no_grad():
            trace = encode_episode(bits, n1, n2, self.encoder, "frozen")
            logits = decoder_logits(trace.y, self.decoder)
        return self._harden(logits.data), trace.x

    def state_arrays(self):
        """Every persisted array by name: all parameters, power weights and frozen statistics."""
        out = {name: p.data for name, p in self.named_parameters().items()}
        out.setdefault("enc.power_w", self.encoder.power_w.data)
        if self.encoder.frozen:
            out["enc.norm_mean"] = self.encoder.norm_mean
            out["enc.norm_var"] = self.encoder.norm_var
        return out

    def load_state(self, arrays):
        params = self.named_parameters()
        params.setdefault("enc.power_w", self.encoder.power_w)
        for name, p in params.items():
            p.data[...] = arrays[name]
        if "enc.norm_mean" in arrays:
            self.encoder.norm_mean = np.array(arrays["enc.norm_mean"])
            self.encoder.norm_var = np.array(arrays["enc.norm_var"])


@dataclass
class TrainReport:
    epoch_loss: list = field(default_factory=list)
    epoch_bler: list = field(default_factory=list)
    wall_clock: float = 0.0
    diverged: bool = False
    steps: int = 0
    max_power_violation: float = 0.0
    restarts: int = 0

    def summary(self):
        lines = ["epoch,mean_loss,train_bler"]
        for e, (l, b) in enumerate(zip(self.epoch_loss, self.epoch_bler)):
            lines.append(f"{e},{l:.10e},{b:.10e}")
        lines.append(f"# steps={self.steps} diverged={self.diverged} restarts={self.restarts} "
                     f"max_power_violation={self.max_power_violation:.3e} wall_clock={self.wall_clock:.1f}s")
        return "\n".join(lines)


def _snapshot(code, opt):
    return [p.data.copy() for p in code.parameters()], copy.deepcopy(opt)


def _restore(code, snap):
    for p, saved in zip(code.parameters(), snap[0]):
        p.data[...] = saved
    return copy.deepcopy(snap[1])


def fit(code, config, on_step=None, checkpoint=None):
    """Optimise ``code`` under ``config``, then freeze its normalisation statistics.

    ``on_step(code, epoch, step)`` runs after each optimizer update and
    projection. ``checkpoint(code, epoch)`` runs every ``config.checkpoint_every``
    epochs. Divergence (non-finite loss or gradient) restores the epoch-start
    parameters, halves the learning rate and retries once; a second failure
    stops training with ``report.diverged`` set and the last good parameters.
    """
    config.validate()
    t0 = time.perf_counter()
    params = code.parameters()
    opt = adam_init([p.data for p in params], config.lr0)
    report = TrainReport()
    steps_per_epoch = config.J // config.batch
    lr_scale = 1.0
    epoch = 0
    pw = code.power_weights
    while epoch < config.epochs:
        snap = _snapshot(code, opt)
        opt.lr = lr_at_epoch(config.lr0, config.lr_decay, epoch) * lr_scale
        losses, errors = [], 0
        try:
            for step in range(steps_per_epoch):
                ids = sample_ids(PURPOSE_TRAIN, epoch * config.J + step * config.batch, config.batch)
                bits, n1, n2 = generate_batch(config.seed, config, ids)
                for p in params:
                    p.grad = None
                loss, bits_hat = code.loss(bits, n1, n2)
                if not np.isfinite(loss.data):
                    raise TrainingDivergence(f"non-finite loss at epoch {epoch}, step {step}")
                loss.backward()
                grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
                grads, _ = clip_global_norm(grads, config.clip_norm)
                adam_step([p.data for p in params], grads, opt)
                if pw is not None:
                    pw.data[...] = project_power_weights(pw.data)
                    report.max_power_violation = max(
                        report.max_power_violation, abs(float(pw.data @ pw.data) - code.N))
                losses.append(float(loss.data))
                errors += int(np.any(bits_hat != bits, axis=1).sum())
                report.steps += 1
                if on_step is not None:
                    on_step(code, epoch, step)
        except TrainingDivergence as exc:
            opt = _restore(code, snap)
            if report.restarts >= 1:
                log.error("training diverged twice, stopping: %s", exc)
                report.diverged = True
                break
            log.warning("%s; halving learning rate and restarting epoch %d", exc, epoch)
            report.restarts += 1
            lr_scale *= 0.5
            continue
        report.epoch_loss.append(float(np.mean(losses)) if losses else float("nan"))
        report.epoch_bler.append(errors / max(1, steps_per_epoch * config.batch))
        log.info("epoch %d loss %.5f train-bler %.3e", epoch, report.epoch_loss[-1], report.epoch_bler[-1])
        epoch += 1
        if checkpoint is not None and config.checkpoint_every and epoch % config.checkpoint_every == 0:
            checkpoint(code, epoch)
    n_freeze = config.freeze_samples
    bits, n1, n2 = generate_batch(config.seed, config, sample_ids(PURPOSE_FREEZE, 0, n_freeze))
    code.freeze(bits, n1, n2)
    report.wall_clock = time.perf_counter() - t0
    return report


def train(config, on_step=None, checkpoint=None):
    """Initialise and train the neural feedback code: returns (encoder, decoder, report)."""
    code = FeedbackCode.init(config)
    report = fit(code, config, on_step=on_step, checkpoint=checkpoint)
    return code.encoder, code.decoder, report


def train_code(config, **kw):
    code = FeedbackCode.init(config)
    report = fit(code, config, **kw)
    return code, report
