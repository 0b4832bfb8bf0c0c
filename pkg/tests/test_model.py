import math
import random

import numpy as np
import pytest
import torch

from anchorparse.grammar import EOS_ID, PAD_ID, Vocabulary
from anchorparse.model.checkpoint import CheckpointError, checkpoint_bytes, load_checkpoint, save_checkpoint
from anchorparse.model.config import ConfigError, ModelConfig, desk_profile, micro_profile, paper_profile
from anchorparse.model.decoder import attend
from anchorparse.model.gradcheck import finite_difference_check, random_micro_config
from anchorparse.model.network import IGNORE, Model, ShapeMismatch, build_sequences, image_tensor
from anchorparse.model.training import NonFiniteLoss, TrainExample, Trainer, cosine_lr
from anchorparse.preprocess import PageImage
from anchorparse.synth.font import draw_text
from anchorparse.types import LAYOUT_PROMPT, PARAGRAPH_PROMPT, TABLE_PROMPT, Prompt


@pytest.fixture(scope="module")
def desk(vocab):
    return Model(desk_profile(len(vocab)), vocab)


def _img(seed, size=256):
    rng = np.random.default_rng(seed)
    return PageImage(rng.integers(0, 256, (size, size), dtype=np.uint8))


def test_config_invariants():
    with pytest.raises(ConfigError):
        ModelConfig(frame_size=250)
    with pytest.raises(ConfigError):
        ModelConfig(stage_depths=(1, 1), stage_heads=(2,))
    p = paper_profile(100)
    assert (p.window_size, p.stage_depths, p.stage_heads, p.decoder_layers, p.decoder_dim) == \
        (7, (2, 2, 14, 2), (4, 8, 16, 32), 10, 1024)
    assert ModelConfig.from_dict(desk_profile(10).to_dict()) == desk_profile(10)


def test_encode_shape_and_errors(desk):
    z = desk.encode(_img(0))
    assert z.shape == (64, 1024)
    assert torch.isfinite(z.tokens).all()
    zero = desk.encode(PageImage(np.zeros((256, 256), np.uint8)))
    ones = desk.encode(PageImage(np.full((256, 256), 255, np.uint8)))
    assert not torch.equal(zero.tokens, ones.tokens)
    with pytest.raises(ShapeMismatch):
        desk.encode(PageImage(np.zeros((256, 255), np.uint8)))


def test_attention_rows_are_distributions():
    torch.manual_seed(0)
    q, k, v = torch.randn(2, 3, 5, 4), torch.randn(2, 3, 7, 4), torch.eye(7).expand(2, 3, 7, 7)
    w = attend(q, k, v, None)
    assert torch.allclose(w.sum(-1), torch.ones(2, 3, 5), atol=1e-6)


def test_causal_mask(desk):
    z = desk.encode(_img(1))
    dec = desk.net.decoder
    mem = dec.memory(z.tokens[None])
    ids = torch.tensor([[0, 40, 41, 42, 43, 44]])
    base = dec(ids, mem)[0]
    changed = ids.clone()
    changed[0, 4:] = torch.tensor([90, 91])
    other = dec(changed, mem)[0]
    assert torch.allclose(base[0, :4], other[0, :4], atol=0)
    assert not torch.allclose(base[0, 4:], other[0, 4:])


def test_generate_totality_and_determinism(desk):
    z = desk.encode(_img(2))
    a = desk.generate(LAYOUT_PROMPT, z, 20)
    b = desk.generate(LAYOUT_PROMPT, z, 20)
    assert a == b
    assert a.ids[0] == 0 and len(a.ids) <= 21
    assert a.truncated or a.ids[-1] == EOS_ID


def test_generate_batch_matches_single(desk):
    rng = random.Random(0)
    prompts = [LAYOUT_PROMPT, PARAGRAPH_PROMPT, TABLE_PROMPT]
    for trial in range(100):
        n = rng.randint(1, 5)
        items = []
        for _ in range(n):
            p = rng.choice(prompts) if rng.random() < 0.7 else Prompt.box_query(
                *sorted(rng.sample(range(256), 2)), *sorted(rng.sample(range(256), 2)))
            items.append((p, desk.encode(_img(rng.randrange(10 ** 6)))))
        batch = desk.generate_batch(items, 12)
        single = [desk.generate(p, z, 12) for p, z in items]
        assert batch == single, f"trial {trial}"


def test_generate_batch_identical_items(desk):
    z = desk.encode(_img(3))
    outs = desk.generate_batch([(PARAGRAPH_PROMPT, z)] * 8, 15)
    assert all(o == outs[0] for o in outs)


def test_initial_loss_near_uniform(desk, vocab):
    batch = [TrainExample(_img(i), PARAGRAPH_PROMPT, vocab.tokenize("some text here")) for i in range(4)]
    images = image_tensor([b.image for b in batch], 256)
    from anchorparse.grammar import encode_prompt

    loss, n = desk.loss(images, [encode_prompt(vocab, b.prompt) for b in batch], [b.target for b in batch])
    assert abs(float(loss.detach()) - math.log(len(vocab))) < 0.2 * math.log(len(vocab))
    assert n == 4 * (len("some text here") + 1)


def test_pad_positions_are_ignored():
    ids, labels = build_sequences([[0, 5, 3], [0, 6, 3]], [[7, 8, 9], [7]])
    assert ids.tolist() == [[0, 5, 3, 7, 8, 9], [0, 6, 3, 7, PAD_ID, PAD_ID]]
    assert labels.tolist() == [[IGNORE, IGNORE, 7, 8, 9, EOS_ID], [IGNORE, IGNORE, 7, EOS_ID, IGNORE, IGNORE]]


def test_memorization(vocab):
    # the desk architecture on a 64 px frame, fed 16 rendered words it must read back
    cfg = desk_profile(len(vocab), frame_size=64, seed=0)
    m = Model(cfg, vocab)
    words = "alpha beta gamma delta eps zeta eta theta iota kappa lam mu nu xi omi pi".split()
    batch = []
    for i, w in enumerate(words):
        canvas = np.full((64, 64), 255, np.uint8)
        text = f"{w} {i}"
        draw_text(canvas, 2, 2 + (i % 3) * 4, text)
        batch.append(TrainExample(PageImage(canvas), PARAGRAPH_PROMPT, vocab.tokenize(text)))
    tr = Trainer(m, total_steps=200, peak_lr=3e-3, warmup=10, weight_decay=0.0)
    losses = [tr.train_step(batch) for _ in range(200)]
    assert losses[-1] < 0.05


def test_non_finite_loss(vocab):
    m = Model(micro_profile(len(vocab)), vocab)
    with torch.no_grad():
        m.net.decoder.tok_emb.weight[5] = float("nan")
    ex = TrainExample(_img(0, m.cfg.frame_size), PARAGRAPH_PROMPT, [5, 6])
    with pytest.raises(NonFiniteLoss) as e:
        Trainer(m, 10).train_step([ex], batch_id=7)
    assert e.value.batch_id == 7


def test_cosine_schedule():
    assert cosine_lr(0, 100, 1.0) == 1.0
    assert cosine_lr(100, 100, 1.0) == pytest.approx(0.0)
    assert cosine_lr(50, 100, 1.0) == pytest.approx(0.5)
    assert cosine_lr(4, 100, 1.0, warmup=10) == pytest.approx(0.5)


def test_gradient_check_passes_and_detects():
    cfg = random_micro_config(0)
    assert finite_difference_check(cfg, 0) < 1e-4
    assert finite_difference_check(cfg, 0, blank=True) < 1e-4

    def corrupt(name, g):
        return g * 1.1 if name.endswith("patch_embed.weight") else g

    assert finite_difference_check(cfg, 0, corrupt=corrupt) > 1e-2


def test_checkpoint_round_trip(tmp_path, desk):
    path = tmp_path / "m.ckpt"
    save_checkpoint(desk, path, {"note": "x"})
    loaded, meta = load_checkpoint(path)
    assert meta == {"note": "x"}
    assert loaded.cfg == desk.cfg and loaded.vocab == desk.vocab
    img = _img(9)
    ids = torch.tensor([[0, 10, 3, 50, 60]])
    with torch.no_grad():
        a = desk.net(image_tensor([img], 256), ids)
        b = loaded.net(image_tensor([img], 256), ids)
    assert torch.equal(a, b)
    assert checkpoint_bytes(desk, {"note": "x"}) == path.read_bytes()


def test_checkpoint_rejects_bad_files(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "missing.ckpt")
    (tmp_path / "bad.ckpt").write_bytes(b"not a zip")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "bad.ckpt")
