"""The permutation-equivariant assignment network.

One graph node per AP.  A layer sends a message along every directed edge,
computed from the source node's features and the edge feature only, averages
incoming messages per destination, and updates each node from its own features
plus the aggregate.  Both the message and the update function are two-branch
PE units: a per-user branch and an all-users averaged branch, so the whole
network is equivariant to user relabeling as well as AP relabeling.

The assignment head is one more PE unit with a single linear output row
followed by a softmax over users, and it is applied recurrently: run u feeds
back ReLU(L - sum of earlier runs) as a per-pair gap feature, with parameters
shared across runs.

Internally every feature matrix is laid out as (feature_dim, N*B*K) where
column (n*B + b)*K + k holds user k of sample b at node n; edge matrices use
the edge index in place of n.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from . import autodiff as ad
from .errors import SchemaError

N_INPUT_FEATURES = 2  # normalized gain + serving-gap feature
EDGE_FEATURE_DIM = 1
SNR_FLOOR = 1e-12  # keeps log10 finite for clamped-to-zero gains


@dataclasses.dataclass(frozen=True)
class ModelConfig:
    n_layers: int = 2
    hidden_width: int = 16
    message_width: int = 8

    def __post_init__(self):
        if self.n_layers < 0:
            raise ValueError("n_layers must be >= 0")
        if self.hidden_width < 1 or self.message_width < 1:
            raise ValueError("widths must be >= 1")

    def node_dim(self, layer):
        """Node feature width entering the given layer."""
        return N_INPUT_FEATURES if layer == 0 else self.hidden_width

    def head_dim(self):
        return N_INPUT_FEATURES if self.n_layers == 0 else self.hidden_width


@dataclasses.dataclass(frozen=True)
class NormStats:
    """Training-set statistics for the log-SNR input feature."""

    mean: float = 0.0
    std: float = 1.0


@dataclasses.dataclass
class GraphTopology:
    n_nodes: int
    src: np.ndarray  # directed edges, sorted by (dst, src)
    dst: np.ndarray
    edge_features: np.ndarray  # (n_edges, EDGE_FEATURE_DIM)

    @property
    def n_edges(self):
        return int(self.src.size)

    def neighbor_sets(self):
        out = [[] for _ in range(self.n_nodes)]
        for s, d in zip(self.src, self.dst):
            out[int(d)].append(int(s))
        return [sorted(v) for v in out]


def build_graph(scenario, rule="full", k=0):
    """Cooperation graph over APs.

    full: complete graph.  k_nearest: each AP proposes its k nearest peers and
    an edge is kept if either endpoint proposed it (mutualized union), which
    keeps the relation symmetric.  Edge feature: distance / area diagonal.
    """
    aps = scenario.ap_array()
    n = scenario.n_aps
    dist = np.linalg.norm(aps[:, None, :] - aps[None, :, :], axis=2)
    if rule == "full":
        adj = ~np.eye(n, dtype=bool)
    elif rule == "k_nearest":
        if not (1 <= k < n):
            raise ValueError(f"k_nearest needs 1 <= k < n_aps, got k={k}")
        adj = np.zeros((n, n), dtype=bool)
        for i in range(n):
            order = np.lexsort((np.arange(n), dist[i]))
            picks = [j for j in order if j != i][:k]
            adj[i, picks] = True
        adj = adj | adj.T
    else:
        raise ValueError(f"unknown topology rule {rule!r}")
    dsts, srcs = np.nonzero(adj)  # row-major: sorted by (dst, src)
    order = np.lexsort((srcs, dsts))
    srcs, dsts = srcs[order], dsts[order]
    diag = float(np.hypot(*scenario.area))
    ef = (dist[srcs, dsts] / diag).reshape(-1, 1)
    return GraphTopology(n_nodes=n, src=srcs.astype(np.intp),
                         dst=dsts.astype(np.intp), edge_features=ef)


def _glorot(rng, n_out, n_in):
    lim = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-lim, lim, size=(n_out, n_in))


def _add_pe_unit(store, prefix, d_in, branch, d_out, rng):
    store.add(f"{prefix}.w_cur", _glorot(rng, branch, d_in))
    store.add(f"{prefix}.b_cur", np.zeros((branch, 1)))
    store.add(f"{prefix}.w_all", _glorot(rng, branch, d_in))
    store.add(f"{prefix}.b_all", np.zeros((branch, 1)))
    store.add(f"{prefix}.w_out", _glorot(rng, d_out, 2 * branch))
    store.add(f"{prefix}.b_out", np.zeros((d_out, 1)))


@dataclasses.dataclass
class GnnModel:
    config: ModelConfig
    store: ad.ParamStore
    norm: NormStats = NormStats()


def init_model(config, rng, norm=None):
    store = ad.ParamStore()
    h, m = config.hidden_width, config.message_width
    for i in range(config.n_layers):
        d = config.node_dim(i)
        _add_pe_unit(store, f"layer{i}.msg", d + EDGE_FEATURE_DIM, m, m, rng)
        _add_pe_unit(store, f"layer{i}.upd", d + m, h, h, rng)
    _add_pe_unit(store, "head", config.head_dim(), h, 1, rng)
    return GnnModel(config=config, store=store,
                    norm=norm if norm is not None else NormStats())


def parameter_count(model):
    return model.store.n_scalars()


def pe_unit_forward(store, prefix, x, n_users, final_linear=False):
    """Two-branch PE unit on a column-layout feature Node."""
    cur = ad.relu(ad.affine(store[f"{prefix}.w_cur"], x, store[f"{prefix}.b_cur"]))
    avg = ad.mean_groups(
        ad.relu(ad.affine(store[f"{prefix}.w_all"], x, store[f"{prefix}.b_all"])),
        n_users)
    out = ad.affine(store[f"{prefix}.w_out"], ad.concat_rows(cur, avg),
                    store[f"{prefix}.b_out"])
    return out if final_linear else ad.relu(out)


def gnn_layer(store, layer, h, topology, n_users, block, edge_row):
    """One message-average-update step; block = columns per node = B*K."""
    src_feats = ad.take_col_blocks(h, topology.src, block)
    msg_in = ad.concat_rows(src_feats, edge_row)
    messages = pe_unit_forward(store, f"layer{layer}.msg", msg_in, n_users)
    agg = ad.segment_mean_col_blocks(messages, topology.dst,
                                     topology.n_nodes, block)
    return pe_unit_forward(store, f"layer{layer}.upd",
                           ad.concat_rows(h, agg), n_users)


def gains_to_row(gains):
    """(B, K, N) -> (1, N*B*K) in the node-major column layout."""
    b, k, n = gains.shape
    return np.ascontiguousarray(gains.transpose(2, 0, 1)).reshape(1, n * b * k)


def row_to_mats(row, n_nodes, batch, n_users):
    """(1, N*B*K) -> (B, K, N)."""
    return row.reshape(n_nodes, batch, n_users).transpose(1, 2, 0)


def normalized_gain_row(gains, sigma2, norm):
    snr = gains / sigma2
    x = np.log10(snr + SNR_FLOOR)
    return gains_to_row((x - norm.mean) / norm.std)


def compute_norm_stats(gains_array, sigma2):
    x = np.log10(gains_array / sigma2 + SNR_FLOOR)
    return NormStats(mean=float(x.mean()), std=float(max(x.std(), 1e-9)))


def edge_feature_row(topology, block):
    """Constant Node with each edge's feature repeated across its block."""
    if topology.n_edges == 0:
        return ad.constant(np.zeros((EDGE_FEATURE_DIM, 0)))
    return ad.constant(np.repeat(topology.edge_features.T, block, axis=1))


def assignment_runs(model, gains, topology, n_runs, min_serving, sigma2,
                    return_gaps=False):
    """Differentiable forward pass over a batch.

    gains: (B, K, N) array.  Returns (list of per-run Nodes, combined Node),
    each of shape (1, N*B*K); per-run columns are softmax outputs so every
    (node, sample) group of K columns sums to one.  The combined node is the
    run sum clamped at one, the relaxed counterpart of the binary union: a
    pair picked in several runs still counts once, so duplicated picks earn
    no extra rate and no extra connection credit.  With return_gaps the
    per-run gap-feature Nodes are appended to the result.
    """
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    batch, n_users, n_nodes = gains.shape
    if n_nodes != topology.n_nodes:
        raise ValueError("gain matrix does not match topology size")
    block = batch * n_users
    gain_row = ad.constant(normalized_gain_row(gains, sigma2, model.norm))
    gap_full = ad.constant(np.full((1, n_nodes * block), float(min_serving)))
    edge_row = edge_feature_row(topology, block)
    store = model.store
    runs = []
    gaps = []
    acc = None
    for _ in range(n_runs):
        if acc is None:
            gap = gap_full
        else:
            gap = ad.relu(ad.sub(gap_full, acc))
        gaps.append(gap)
        h = ad.concat_rows(gain_row, gap)
        for layer in range(model.config.n_layers):
            h = gnn_layer(store, layer, h, topology, n_users, block, edge_row)
        logits = pe_unit_forward(store, "head", h, n_users, final_linear=True)
        s_run = ad.softmax_groups(logits, n_users)
        runs.append(s_run)
        acc = s_run if acc is None else ad.add(acc, s_run)
    combined = ad.sub(acc, ad.relu(ad.add_scalar(acc, -1.0)))
    if return_gaps:
        return runs, combined, gaps
    return runs, combined


def recurrent_assign(model, gains, topology, n_runs, min_serving, sigma2):
    """Inference on a single K x N gain matrix.

    Returns (per-run slices, combined), each a (K, N) array.
    """
    gains = np.asarray(gains, dtype=np.float64)
    if gains.ndim != 2:
        raise ValueError("gains must be a K x N matrix")
    with ad.no_grad():
        runs, comb = assignment_runs(model, gains[None], topology, n_runs,
                                     min_serving, sigma2)
    k, n = gains.shape
    return ([row_to_mats(r.value, n, 1, k)[0] for r in runs],
            row_to_mats(comb.value, n, 1, k)[0])


@dataclasses.dataclass(frozen=True)
class FronthaulBytes:
    local: int
    generic: int


def fronthaul_bytes(topology, config, n_users, n_runs):
    """Floats shipped across edges for one full n_runs inference, in bytes.

    Local rule: each directed edge carries one message matrix
    (message_width x n_users) per layer per run.  The generic variant also
    ships the destination's input features back to the source per layer per
    run, since its message function reads both endpoints.
    """
    e = topology.n_edges
    local = e * n_runs * config.n_layers * config.message_width * n_users * 8
    extra = sum(config.node_dim(i) for i in range(config.n_layers))
    generic = local + e * n_runs * extra * n_users * 8
    return FronthaulBytes(local=int(local), generic=int(generic))


def model_meta(model):
    return {
        "model.n_layers": model.config.n_layers,
        "model.hidden_width": model.config.hidden_width,
        "model.message_width": model.config.message_width,
        "norm.mean": model.norm.mean,
        "norm.std": model.norm.std,
    }


def save_model(path, model, extra_tensors=None, extra_meta=None):
    tensors = model.store.to_arrays()
    if extra_tensors:
        for name, arr in extra_tensors.items():
            if name in tensors:
                raise ValueError(f"extra tensor name collides: {name!r}")
            tensors[name] = arr
    meta = model_meta(model)
    if extra_meta:
        meta.update(extra_meta)
    ad.save_checkpoint(path, tensors, meta)


def load_model(path):
    """Returns (model, extra_tensors, meta); extras are non-parameter tensors."""
    tensors, meta = ad.load_checkpoint(path)
    try:
        config = ModelConfig(n_layers=int(meta["model.n_layers"]),
                             hidden_width=int(meta["model.hidden_width"]),
                             message_width=int(meta["model.message_width"]))
        norm = NormStats(mean=float(meta["norm.mean"]), std=float(meta["norm.std"]))
    except KeyError as exc:
        raise SchemaError(f"{path}: missing model metadata {exc}") from exc
    model = init_model(config, np.random.default_rng(0), norm=norm)
    own = set()
    for name in model.store.names():
        if name not in tensors:
            raise SchemaError(f"{path}: missing parameter {name!r}")
        own.add(name)
    model.store.load_arrays({n: tensors[n] for n in own})
    extras = {n: t for n, t in tensors.items() if n not in own}
    return model, extras, meta
