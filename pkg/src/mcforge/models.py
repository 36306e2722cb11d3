"""Neural readers: FFNN (2-class + argmax), FFNN5, and a hybrid GRU
seq2seq + FFNN classifier with a mixed classification/generation loss.

All models run on the in-package autodiff engine. Sequences are padded and
every pooled reduction, attention row, and loss term is length-masked, so
appending pad tokens never changes a loss. The hybrid decoder is
teacher-forced during training and decodes greedily at generation time.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import rng as rngmod
from .autodiff import Adagrad, Tape, Tensor, clip_global_norm, constant
from .blobio import read_blob, write_blob
from .corpus import BOS, EOS, PAD, SENTINELS, Vocabulary, tokenize
from .dataset import McInstance, Pair
from .evaluation import Prediction, argmax_lowest
from .metrics import rouge_l

CKPT_MAGIC = b"MCFORGE/CKPT/1\n"


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = 100_000
    embed_dim: int = 512
    ffnn_hidden: tuple[int, ...] = (1024, 256)
    head_hidden: tuple[int, ...] = (64, 16)
    gru_layers: int = 2
    gru_hidden: int = 512
    attention: str = "bilinear"          # bilinear | tanh
    tied_embeddings: bool = True
    lambda_gen: float = 0.01
    max_article_len: int = 120
    max_title_len: int = 20
    pooling: str = "mean"                # mean | final

    def __post_init__(self):
        if self.lambda_gen < 0:
            raise ValueError("lambda_gen must be >= 0")
        sizes = (self.vocab_size, self.embed_dim, self.gru_hidden, self.gru_layers,
                 *self.ffnn_hidden, *self.head_hidden,
                 self.max_article_len, self.max_title_len)
        if any(s < 1 for s in sizes):
            raise ValueError("all sizes must be positive")
        if self.attention not in ("bilinear", "tanh"):
            raise ValueError(f"unknown attention variant {self.attention!r}")
        if self.pooling not in ("mean", "final"):
            raise ValueError(f"unknown pooling {self.pooling!r}")

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size, "embed_dim": self.embed_dim,
            "ffnn_hidden": list(self.ffnn_hidden), "head_hidden": list(self.head_hidden),
            "gru_layers": self.gru_layers, "gru_hidden": self.gru_hidden,
            "attention": self.attention, "tied_embeddings": self.tied_embeddings,
            "lambda_gen": self.lambda_gen, "max_article_len": self.max_article_len,
            "max_title_len": self.max_title_len, "pooling": self.pooling,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["ffnn_hidden"] = tuple(d["ffnn_hidden"])
        d["head_hidden"] = tuple(d["head_hidden"])
        return cls(**d)


def desk_config(**overrides) -> ModelConfig:
    """Small defaults that train in seconds on one core."""
    base = dict(vocab_size=2000, embed_dim=64, gru_hidden=64,
                ffnn_hidden=(128, 32), max_article_len=60, max_title_len=16)
    base.update(overrides)
    return ModelConfig(**base)


# -- parameter registry -------------------------------------------------------

def _gru_shapes(prefix: str, in_dim: int, hidden: int) -> dict[str, tuple]:
    shapes = {}
    for gate in ("z", "r", "h"):
        shapes[f"{prefix}.w{gate}"] = (in_dim + hidden, hidden)
        shapes[f"{prefix}.b{gate}"] = (1, hidden)
    return shapes


def _mlp_shapes(prefix: str, in_dim: int, hidden: tuple[int, ...], out_dim: int):
    shapes = {}
    dims = (in_dim, *hidden, out_dim)
    for i in range(len(dims) - 1):
        shapes[f"{prefix}.w{i}"] = (dims[i], dims[i + 1])
        shapes[f"{prefix}.b{i}"] = (1, dims[i + 1])
    return shapes


def param_shapes(kind: str, cfg: ModelConfig) -> dict[str, tuple]:
    """Name -> shape for every trainable tensor of a model kind."""
    v, e, h = cfg.vocab_size, cfg.embed_dim, cfg.gru_hidden
    if kind == "ffnn":
        return {"emb": (v, e), **_mlp_shapes("ffnn", 2 * e, cfg.ffnn_hidden, 2)}
    if kind == "ffnn5":
        return {"emb": (v, e), **_mlp_shapes("ffnn", 6 * e, cfg.ffnn_hidden, 5)}
    if kind != "hybrid":
        raise ValueError(f"unknown model kind {kind!r}")
    shapes: dict[str, tuple] = {}
    if cfg.tied_embeddings:
        shapes["emb"] = (v, e)
    else:
        shapes["emb_src"] = (v, e)
        shapes["emb_tgt"] = (v, e)
    for side in ("enc", "dec"):
        for layer in range(cfg.gru_layers):
            in_dim = e if layer == 0 else h
            shapes.update(_gru_shapes(f"{side}.l{layer}", in_dim, h))
    if cfg.attention == "bilinear":
        shapes["att.w"] = (h, h)
    else:
        shapes["att.w1"] = (h, h)
        shapes["att.w2"] = (h, h)
        shapes["att.v"] = (h, 1)
    shapes["comb.w"] = (2 * h, h)
    shapes["comb.b"] = (1, h)
    if cfg.tied_embeddings:
        shapes["gen.proj"] = (h, e)
    else:
        shapes["gen.w"] = (h, v)
    shapes.update(_mlp_shapes("head", 2 * h, cfg.head_hidden, 2))
    return shapes


def parameter_count(shapes: dict[str, tuple]) -> int:
    return sum(int(np.prod(s)) for s in shapes.values())


def init_params(kind: str, cfg: ModelConfig, seed: int = 0) -> dict[str, Tensor]:
    params = {}
    for name, shape in param_shapes(kind, cfg).items():
        gen = rngmod.generator(seed, "init", name)
        if name.split(".")[-1].startswith("b"):
            data = np.zeros(shape)
        else:
            bound = np.sqrt(6.0 / sum(shape))
            data = gen.uniform(-bound, bound, size=shape)
        params[name] = Tensor(data, requires_grad=True, name=name)
    return params


# -- batches ------------------------------------------------------------------

@dataclass
class SeqBlock:
    ids: np.ndarray        # (B, T) int64, PAD-filled
    mask: np.ndarray       # (B, T) float, 1 on real tokens
    truncated: int = 0


def _encode_block(token_lists, vocab: Vocabulary, max_len: int) -> SeqBlock:
    rows = [vocab.encode(toks) for toks in token_lists]
    truncated = sum(len(r) > max_len for r in rows)
    rows = [r[:max_len] for r in rows]
    width = max(1, max(len(r) for r in rows))
    ids = np.full((len(rows), width), PAD, dtype=np.int64)
    mask = np.zeros((len(rows), width), dtype=np.float64)
    for i, r in enumerate(rows):
        ids[i, :len(r)] = r
        mask[i, :len(r)] = 1.0
    return SeqBlock(ids=ids, mask=mask, truncated=truncated)


@dataclass
class PairBatch:
    article: SeqBlock
    title: SeqBlock
    labels: np.ndarray          # (B,) 0/1
    dec_input: np.ndarray       # (B, T+1): BOS then title ids
    dec_target: np.ndarray      # (B, T+1): title ids then EOS
    dec_mask: np.ndarray        # (B, T+1)

    @property
    def size(self) -> int:
        return self.labels.shape[0]


def make_pair_batch(pairs: list[Pair], vocab: Vocabulary, cfg: ModelConfig) -> PairBatch:
    article = _encode_block([tokenize(p.article) for p in pairs], vocab, cfg.max_article_len)
    title = _encode_block([tokenize(p.title) for p in pairs], vocab, cfg.max_title_len)
    b, t = title.ids.shape
    dec_input = np.full((b, t + 1), PAD, dtype=np.int64)
    dec_target = np.full((b, t + 1), PAD, dtype=np.int64)
    dec_mask = np.zeros((b, t + 1), dtype=np.float64)
    dec_input[:, 0] = BOS
    dec_input[:, 1:] = title.ids
    dec_target[:, :t] = title.ids
    lengths = title.mask.sum(axis=1).astype(np.int64)
    for i, ln in enumerate(lengths):
        dec_target[i, ln] = EOS
        dec_mask[i, :ln + 1] = 1.0
    return PairBatch(article=article, title=title,
                     labels=np.array([p.label for p in pairs], dtype=np.int64),
                     dec_input=dec_input, dec_target=dec_target, dec_mask=dec_mask)


@dataclass
class InstanceBatch:
    article: SeqBlock
    options: list[SeqBlock]     # one block per option position
    gold: np.ndarray            # (B,)


def make_instance_batch(instances: list[McInstance], vocab: Vocabulary,
                        cfg: ModelConfig) -> InstanceBatch:
    n_options = len(instances[0].options)
    if any(len(inst.options) != n_options for inst in instances):
        raise ValueError("instances in one batch must share the option count")
    article = _encode_block([tokenize(i.article) for i in instances], vocab,
                            cfg.max_article_len)
    options = [
        _encode_block([tokenize(i.options[j].text) for i in instances], vocab,
                      cfg.max_title_len)
        for j in range(n_options)
    ]
    return InstanceBatch(article=article, options=options,
                         gold=np.array([i.gold_index for i in instances], dtype=np.int64))


# -- shared graph pieces ------------------------------------------------------

def _one_minus(x: Tensor) -> Tensor:
    return ad.add_const(ad.scale(x, -1.0), 1.0)


def pooled_embedding(table: Tensor, block: SeqBlock) -> Tensor:
    """Length-masked mean of embedded tokens, one row per sequence."""
    b, t = block.ids.shape
    flat = ad.embedding_gather(table, block.ids.reshape(-1))
    weights = np.zeros((b, b * t))
    lengths = np.maximum(block.mask.sum(axis=1), 1.0)
    for i in range(b):
        weights[i, i * t:(i + 1) * t] = block.mask[i] / lengths[i]
    return ad.matmul(constant(weights), flat)


def mlp(x: Tensor, params: dict[str, Tensor], prefix: str, n_layers: int) -> Tensor:
    """ReLU MLP; returns final-layer logits (no activation on the last layer)."""
    h = x
    for i in range(n_layers):
        h = ad.add_bias(ad.matmul(h, params[f"{prefix}.w{i}"]), params[f"{prefix}.b{i}"])
        if i < n_layers - 1:
            h = ad.relu(h)
    return h


def gru_cell(x: Tensor, h: Tensor, params: dict[str, Tensor], prefix: str) -> Tensor:
    """z = sig(Wz[x,h]+bz); r = sig(Wr[x,h]+br); hbar = tanh(Wh[x, r*h]+bh);
    h' = z*h + (1-z)*hbar."""
    xh = ad.concat([x, h], axis=1)
    z = ad.sigmoid(ad.add_bias(ad.matmul(xh, params[f"{prefix}.wz"]), params[f"{prefix}.bz"]))
    r = ad.sigmoid(ad.add_bias(ad.matmul(xh, params[f"{prefix}.wr"]), params[f"{prefix}.br"]))
    xrh = ad.concat([x, ad.mul(r, h)], axis=1)
    hbar = ad.tanh(ad.add_bias(ad.matmul(xrh, params[f"{prefix}.wh"]), params[f"{prefix}.bh"]))
    return ad.add(ad.mul(z, h), ad.mul(_one_minus(z), hbar))


def _masked_carry(h_new: Tensor, h_old: Tensor, step_mask: np.ndarray) -> Tensor:
    # padded rows keep their previous state, so trailing pads are inert
    m = constant(step_mask.reshape(-1, 1))
    return ad.add(ad.scale_rows(h_new, m), ad.scale_rows(h_old, constant(1.0 - step_mask.reshape(-1, 1))))


def run_gru_stack(table: Tensor, ids: np.ndarray, mask: np.ndarray,
                  params: dict[str, Tensor], side: str, cfg: ModelConfig,
                  init_states: list[Tensor] | None = None):
    """Unroll a GRU stack over (B, T) token ids.

    Returns (top-layer outputs per step, final state per layer).
    """
    b, t = ids.shape
    hidden = cfg.gru_hidden
    states = (list(init_states) if init_states is not None
              else [constant(np.zeros((b, hidden))) for _ in range(cfg.gru_layers)])
    outputs: list[Tensor] = []
    for step in range(t):
        x = ad.embedding_gather(table, ids[:, step])
        step_mask = mask[:, step]
        for layer in range(cfg.gru_layers):
            h_new = gru_cell(x, states[layer], params, f"{side}.l{layer}")
            states[layer] = _masked_carry(h_new, states[layer], step_mask)
            x = states[layer]
        outputs.append(states[-1])
    return outputs, states


def attend(state: Tensor, enc_outputs: list[Tensor], enc_mask: np.ndarray,
           params: dict[str, Tensor], variant: str) -> tuple[Tensor, Tensor]:
    """Attention over encoder outputs; rows of the mask must have a real token.

    bilinear: score_i = s W h_i;  tanh: score_i = v' tanh(W1 s + W2 h_i).
    Returns (context, alpha) with alpha rows summing to 1 over real positions.
    """
    if not enc_outputs:
        raise ValueError("attend: encoder produced no outputs")
    if variant == "bilinear":
        sw = ad.matmul(state, params["att.w"])
        scores = [ad.reduce_sum(ad.mul(sw, h), axis=1) for h in enc_outputs]
    else:
        w1s = ad.matmul(state, params["att.w1"])
        scores = [ad.matmul(ad.tanh(ad.add(w1s, ad.matmul(h, params["att.w2"]))),
                            params["att.v"]) for h in enc_outputs]
    alpha = ad.softmax(ad.concat(scores, axis=1), mask=enc_mask.astype(bool))
    context = None
    for i, h in enumerate(enc_outputs):
        piece = ad.scale_rows(h, ad.slice_axis(alpha, 1, i, i + 1))
        context = piece if context is None else ad.add(context, piece)
    return context, alpha


def _masked_mean(outputs: list[Tensor], mask: np.ndarray) -> Tensor:
    lengths = np.maximum(mask.sum(axis=1), 1.0)
    pooled = None
    for i, h in enumerate(outputs):
        w = constant((mask[:, i] / lengths).reshape(-1, 1))
        piece = ad.scale_rows(h, w)
        pooled = piece if pooled is None else ad.add(pooled, piece)
    return pooled


def _pool(outputs: list[Tensor], final_state: Tensor, mask: np.ndarray,
          cfg: ModelConfig) -> Tensor:
    if cfg.pooling == "mean":
        return _masked_mean(outputs, mask)
    return final_state


def _class_nll(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy of the labeled class."""
    b, k = logits.shape
    onehot = np.zeros((b, k))
    onehot[np.arange(b), labels] = 1.0
    logp = ad.log_softmax(logits)
    picked = ad.reduce_sum(ad.mul(logp, constant(onehot)), axis=1)
    return ad.scale(ad.reduce_mean(picked), -1.0)


# -- FFNN models --------------------------------------------------------------

class FfnnModel:
    """Binary yes/no classifier over (title, article) pairs, argmax across options."""

    kind = "ffnn"

    def __init__(self, cfg: ModelConfig, vocab: Vocabulary, seed: int = 0,
                 params: dict[str, Tensor] | None = None):
        self.cfg = cfg
        self.vocab = vocab
        self.params = params if params is not None else init_params(self.kind, cfg, seed)
        self._n_mlp = len(cfg.ffnn_hidden) + 1

    def logits(self, batch: PairBatch) -> Tensor:
        article = pooled_embedding(self.params["emb"], batch.article)
        title = pooled_embedding(self.params["emb"], batch.title)
        return self.head(article, title)

    def head(self, article_pooled: Tensor, title_pooled: Tensor) -> Tensor:
        return mlp(ad.concat([article_pooled, title_pooled], axis=1),
                   self.params, "ffnn", self._n_mlp)

    def forward(self, batch: PairBatch) -> Tensor:
        """Per-pair class probabilities (rows sum to 1)."""
        return ad.softmax(self.logits(batch))

    def loss(self, batch: PairBatch) -> Tensor:
        return _class_nll(self.logits(batch), batch.labels)

    def option_yes_probs(self, instances: list[McInstance]) -> np.ndarray:
        pairs = [Pair(opt.text, inst.article, 0)
                 for inst in instances for opt in inst.options]
        probs = self.forward(make_pair_batch(pairs, self.vocab, self.cfg)).data
        return probs[:, 1].reshape(len(instances), -1)

    def predict(self, instances: list[McInstance]) -> list[Prediction]:
        preds = []
        for chunk in _chunks(instances, 32):
            yes = self.option_yes_probs(chunk)
            preds.extend(Prediction.from_scores(inst.id, yes[i])
                         for i, inst in enumerate(chunk))
        return preds

    def make_batch(self, examples: list[Pair]) -> PairBatch:
        return make_pair_batch(examples, self.vocab, self.cfg)


class Ffnn5Model:
    """5-way classifier over the article plus all five options at once."""

    kind = "ffnn5"

    def __init__(self, cfg: ModelConfig, vocab: Vocabulary, seed: int = 0,
                 params: dict[str, Tensor] | None = None):
        self.cfg = cfg
        self.vocab = vocab
        self.params = params if params is not None else init_params(self.kind, cfg, seed)
        self._n_mlp = len(cfg.ffnn_hidden) + 1

    def logits(self, batch: InstanceBatch) -> Tensor:
        if len(batch.options) != 5:
            raise ValueError(f"ffnn5 needs exactly 5 options, got {len(batch.options)}")
        parts = [pooled_embedding(self.params["emb"], batch.article)]
        parts += [pooled_embedding(self.params["emb"], blk) for blk in batch.options]
        return mlp(ad.concat(parts, axis=1), self.params, "ffnn", self._n_mlp)

    def forward(self, batch: InstanceBatch) -> Tensor:
        return ad.softmax(self.logits(batch))

    def loss(self, batch: InstanceBatch) -> Tensor:
        return _class_nll(self.logits(batch), batch.gold)

    def predict(self, instances: list[McInstance]) -> list[Prediction]:
        preds = []
        for chunk in _chunks(instances, 32):
            probs = self.forward(make_instance_batch(chunk, self.vocab, self.cfg)).data
            preds.extend(Prediction.from_scores(inst.id, probs[i])
                         for i, inst in enumerate(chunk))
        return preds

    def make_batch(self, examples: list[McInstance]) -> InstanceBatch:
        return make_instance_batch(examples, self.vocab, self.cfg)


# -- hybrid model -------------------------------------------------------------

@dataclass
class Seq2seqOutputs:
    encoder_outputs: list[Tensor]
    decoder_outputs: list[Tensor]
    alphas: list[Tensor]


@dataclass
class HybridForward:
    class_probs: Tensor                 # (B, 2)
    class_logits: Tensor                # (B, 2)
    step_logprobs: list[Tensor]         # per decoder step, (B, V) log-softmax
    outputs: Seq2seqOutputs


class HybridModel:
    """Seq2seq encoder/decoder whose pooled outputs feed a small FFNN head."""

    kind = "hybrid"

    def __init__(self, cfg: ModelConfig, vocab: Vocabulary, seed: int = 0,
                 params: dict[str, Tensor] | None = None):
        self.cfg = cfg
        self.vocab = vocab
        self.params = params if params is not None else init_params(self.kind, cfg, seed)
        self._n_head = len(cfg.head_hidden) + 1

    def _src_table(self) -> Tensor:
        return self.params["emb"] if self.cfg.tied_embeddings else self.params["emb_src"]

    def _tgt_table(self) -> Tensor:
        return self.params["emb"] if self.cfg.tied_embeddings else self.params["emb_tgt"]

    def _vocab_logits(self, out: Tensor) -> Tensor:
        if self.cfg.tied_embeddings:
            return ad.matmul_t(ad.matmul(out, self.params["gen.proj"]), self.params["emb"])
        return ad.matmul(out, self.params["gen.w"])

    def _decoder_step(self, token_ids: np.ndarray, step_mask: np.ndarray,
                      states: list[Tensor], enc_outputs: list[Tensor],
                      enc_mask: np.ndarray):
        x = ad.embedding_gather(self._tgt_table(), token_ids)
        for layer in range(self.cfg.gru_layers):
            h_new = gru_cell(x, states[layer], self.params, f"dec.l{layer}")
            states[layer] = _masked_carry(h_new, states[layer], step_mask)
            x = states[layer]
        context, alpha = attend(states[-1], enc_outputs, enc_mask,
                                self.params, self.cfg.attention)
        merged = ad.concat([states[-1], context], axis=1)
        out = ad.tanh(ad.add_bias(ad.matmul(merged, self.params["comb.w"]),
                                  self.params["comb.b"]))
        return out, alpha, states

    def forward(self, batch: PairBatch, need_generation: bool = True) -> HybridForward:
        enc_outputs, enc_states = run_gru_stack(
            self._src_table(), batch.article.ids, batch.article.mask,
            self.params, "enc", self.cfg)
        dec_states = list(enc_states)
        dec_outputs: list[Tensor] = []
        alphas: list[Tensor] = []
        step_logprobs: list[Tensor] = []
        final_out = constant(np.zeros((batch.size, self.cfg.gru_hidden)))
        for step in range(batch.dec_input.shape[1]):
            step_mask = batch.dec_mask[:, step]
            out, alpha, dec_states = self._decoder_step(
                batch.dec_input[:, step], step_mask, dec_states,
                enc_outputs, batch.article.mask)
            dec_outputs.append(out)
            alphas.append(alpha)
            final_out = _masked_carry(out, final_out, step_mask)
            if need_generation:
                step_logprobs.append(ad.log_softmax(self._vocab_logits(out)))
        enc_pooled = _pool(enc_outputs, enc_states[-1], batch.article.mask, self.cfg)
        dec_pooled = _pool(dec_outputs, final_out, batch.dec_mask, self.cfg)
        logits = mlp(ad.concat([enc_pooled, dec_pooled], axis=1),
                     self.params, "head", self._n_head)
        return HybridForward(
            class_probs=ad.softmax(logits), class_logits=logits,
            step_logprobs=step_logprobs,
            outputs=Seq2seqOutputs(enc_outputs, dec_outputs, alphas))

    def loss(self, batch: PairBatch) -> Tensor:
        """Classification cross-entropy plus lambda_gen times the generation
        cross-entropy, the latter gated to gold pairs only."""
        lam = self.cfg.lambda_gen
        fwd = self.forward(batch, need_generation=lam > 0)
        total = _class_nll(fwd.class_logits, batch.labels)
        if lam > 0:
            gold_gate = (batch.labels == 1).astype(np.float64)
            denom = max(1.0, float((batch.dec_mask * gold_gate[:, None]).sum()))
            gen_sum = None
            v = self.cfg.vocab_size
            for step, logp in enumerate(fwd.step_logprobs):
                weights = np.zeros((batch.size, v))
                rows = np.arange(batch.size)
                weights[rows, batch.dec_target[:, step]] = \
                    gold_gate * batch.dec_mask[:, step]
                term = ad.reduce_sum(ad.mul(logp, constant(weights)))
                gen_sum = term if gen_sum is None else ad.add(gen_sum, term)
            total = ad.add(total, ad.scale(gen_sum, -lam / denom))
        return total

    def option_yes_probs(self, instances: list[McInstance]) -> np.ndarray:
        pairs = [Pair(opt.text, inst.article, 0)
                 for inst in instances for opt in inst.options]
        batch = make_pair_batch(pairs, self.vocab, self.cfg)
        probs = self.forward(batch, need_generation=False).class_probs.data
        return probs[:, 1].reshape(len(instances), -1)

    def predict(self, instances: list[McInstance]) -> list[Prediction]:
        preds = []
        for chunk in _chunks(instances, 8):
            yes = self.option_yes_probs(chunk)
            preds.extend(Prediction.from_scores(inst.id, yes[i])
                         for i, inst in enumerate(chunk))
        return preds

    def make_batch(self, examples: list[Pair]) -> PairBatch:
        return make_pair_batch(examples, self.vocab, self.cfg)

    def generate(self, article_tokens: list[str], max_len: int = 16) -> list[str]:
        """Greedy decode from BOS until EOS or max_len tokens."""
        ids = np.asarray([self.vocab.encode(article_tokens)[:self.cfg.max_article_len]],
                         dtype=np.int64)
        if ids.shape[1] == 0:
            return []
        mask = np.ones_like(ids, dtype=np.float64)
        enc_outputs, enc_states = run_gru_stack(
            self._src_table(), ids, mask, self.params, "enc", self.cfg)
        states = list(enc_states)
        token = np.array([BOS], dtype=np.int64)
        out_tokens: list[str] = []
        for _ in range(max_len):
            out, _, states = self._decoder_step(
                token, np.ones(1), states, enc_outputs, mask)
            logits = self._vocab_logits(out).data[0]
            next_id = int(argmax_lowest(logits))
            if next_id == EOS:
                break
            out_tokens.append(self.vocab.id_to_token[next_id]
                              if next_id < len(self.vocab) else SENTINELS[1])
            token = np.array([next_id], dtype=np.int64)
        return out_tokens


MODEL_KINDS = {"ffnn": FfnnModel, "ffnn5": Ffnn5Model, "hybrid": HybridModel}


def build_model(kind: str, cfg: ModelConfig, vocab: Vocabulary, seed: int = 0,
                params: dict[str, Tensor] | None = None):
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}")
    return MODEL_KINDS[kind](cfg, vocab, seed=seed, params=params)


def _chunks(seq, n):
    for i in range(0, len(seq), n):
        yield seq[i:i + n]


# -- training -----------------------------------------------------------------

class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, recent_losses: list[float]):
        super().__init__(f"non-finite loss at step {step}; "
                         f"recent losses: {recent_losses}")
        self.step = step
        self.recent_losses = recent_losses


@dataclass
class TrainLogRow:
    step: int
    train_loss: float
    dev_acc: float | None = None
    rouge_l: float | None = None


@dataclass
class TrainResult:
    best_params: dict[str, Tensor]
    final_params: dict[str, Tensor]
    log: list[TrainLogRow] = field(default_factory=list)
    best_step: int = 0
    best_dev_acc: float = 0.0

    def write_log_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "train_loss", "dev_acc", "rouge_l"])
            for row in self.log:
                writer.writerow([row.step, f"{row.train_loss:.6f}",
                                 "" if row.dev_acc is None else f"{row.dev_acc:.4f}",
                                 "" if row.rouge_l is None else f"{row.rouge_l:.4f}"])


def _snapshot(params: dict[str, Tensor]) -> dict[str, Tensor]:
    return {k: Tensor(t.data.copy(), requires_grad=True, name=k)
            for k, t in params.items()}


def instance_accuracy(model, instances: list[McInstance]) -> float:
    preds = model.predict(instances)
    golds = {inst.id: inst.gold_index for inst in instances}
    hits = sum(p.chosen_index == golds[p.instance_id] for p in preds)
    return hits / max(1, len(instances))


def generation_rouge(model: HybridModel, instances: list[McInstance],
                     max_len: int = 16, sample: int = 20, seed: int = 0) -> float:
    picks = instances
    if sample and len(instances) > sample:
        gen = rngmod.generator(seed, "rouge-sample")
        idx = gen.choice(len(instances), size=sample, replace=False)
        picks = [instances[i] for i in sorted(idx)]
    scores = []
    for inst in picks:
        generated = model.generate(tokenize(inst.article), max_len=max_len)
        scores.append(rouge_l(generated, tokenize(inst.gold().text)))
    return float(np.mean(scores)) if scores else 0.0


def train(model, examples: list, dev_instances: list[McInstance] | None = None,
          steps: int = 500, batch_size: int = 16, lr: float = 0.01,
          clip_norm: float = 4.0, eval_every: int = 100, seed: int = 0,
          track_rouge: bool = False, replicas: int = 1) -> TrainResult:
    """forward / backward / clip(4.0) / adagrad(0.01) loop with periodic dev
    accuracy and best-checkpoint selection.

    Examples are consumed in the given order, wrapping around; pass a
    shuffled list for shuffled training.
    """
    if not examples:
        raise ValueError("training needs at least one example")
    optimizer = Adagrad(model.params, lr=lr)
    result = TrainResult(best_params=_snapshot(model.params),
                         final_params=model.params)
    recent: list[float] = []
    cursor = 0

    def next_batch():
        nonlocal cursor
        batch = []
        while len(batch) < batch_size:
            batch.append(examples[cursor % len(examples)])
            cursor += 1
        return batch

    for step in range(1, steps + 1):
        batch_examples = next_batch()
        grads, loss_val = _step_gradients(model, batch_examples, replicas)
        if not np.isfinite(loss_val):
            raise TrainingDiverged(step, recent[-5:] + [loss_val])
        grads = clip_global_norm(grads, clip_norm)
        optimizer.step(grads)
        recent.append(loss_val)
        row = TrainLogRow(step=step, train_loss=loss_val)
        if dev_instances and (step % eval_every == 0 or step == steps):
            row.dev_acc = instance_accuracy(model, dev_instances)
            if track_rouge and isinstance(model, HybridModel):
                row.rouge_l = generation_rouge(model, dev_instances, seed=seed)
            if row.dev_acc > result.best_dev_acc:
                result.best_dev_acc = row.dev_acc
                result.best_step = step
                result.best_params = _snapshot(model.params)
        result.log.append(row)
    if not dev_instances:
        result.best_params = _snapshot(model.params)
        result.best_step = steps
    return result


def _step_gradients(model, batch_examples, replicas: int):
    """Gradients averaged over example shards in fixed shard order."""
    if replicas <= 1:
        batch = model.make_batch(batch_examples)
        with Tape() as tape:
            tape.watch(model.params)
            loss = model.loss(batch)
        return tape.backward(loss), float(loss.item())
    shards = [batch_examples[i::replicas] for i in range(replicas)]
    shards = [s for s in shards if s]
    total = sum(len(s) for s in shards)
    merged: dict[str, np.ndarray] = {}
    loss_val = 0.0
    for shard in shards:     # fixed order => deterministic reduction
        batch = model.make_batch(shard)
        with Tape() as tape:
            tape.watch(model.params)
            loss = model.loss(batch)
        grads = tape.backward(loss)
        weight = len(shard) / total
        loss_val += float(loss.item()) * weight
        for name, g in grads.items():
            merged[name] = merged.get(name, 0.0) + g * weight
    return merged, loss_val


# -- checkpoints ----------------------------------------------------------------

def save_checkpoint(path, kind: str, cfg: ModelConfig, params: dict[str, Tensor],
                    vocab: Vocabulary, step: int = 0, dev_acc: float = 0.0) -> None:
    header = {
        "kind": kind,
        "config": cfg.to_dict(),
        "step": step,
        "dev_acc": dev_acc,
        "vocab": [[t, vocab.counts.get(t, 0)] for t in vocab.id_to_token[len(SENTINELS):]],
        "vocab_min_count": vocab.min_count,
        "vocab_max_types": vocab.max_types,
    }
    write_blob(path, CKPT_MAGIC, header,
               {k: t.data.astype(np.float32) for k, t in params.items()})


def load_checkpoint(path):
    header, arrays = read_blob(path, CKPT_MAGIC)
    cfg = ModelConfig.from_dict(header["config"])
    vocab = Vocabulary([(t, c) for t, c in header["vocab"]],
                       min_count=header["vocab_min_count"],
                       max_types=header["vocab_max_types"])
    params = {k: Tensor(v, requires_grad=True, name=k) for k, v in arrays.items()}
    model = build_model(header["kind"], cfg, vocab, params=params)
    return model, header["step"], header["dev_acc"]
