"""Parameterized building blocks of the MindCross network."""

import math
from collections.abc import Iterator

import numpy as np

from ..engine import Tensor
from ..engine import functional as F


class Module:
    """Holds named parameters and child modules; names join with '/'."""

    def __init__(self) -> None:
        self._params: dict[str, Tensor] = {}
        self._children: dict[str, Module] = {}

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, tensor in self._params.items():
            yield (f"{prefix}/{key}" if prefix else key), tensor
        for key, child in self._children.items():
            yield from child.named_parameters(f"{prefix}/{key}" if prefix else key)

    def parameter_count(self) -> int:
        return sum(t.size for _, t in self.named_parameters())

    def copy_from(self, other: "Module") -> None:
        for (_, mine), (_, theirs) in zip(self.named_parameters(), other.named_parameters()):
            mine.data[...] = theirs.data


class Linear(Module):
    """y = x W + b with W uniform in +-1/sqrt(fan_in) and b zero."""

    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator):
        super().__init__()
        bound = 1.0 / math.sqrt(fan_in)
        self.weight = Tensor(rng.uniform(-bound, bound, (fan_in, fan_out)), requires_grad=True)
        self.bias = Tensor(np.zeros(fan_out), requires_grad=True)
        self._params = {"weight": self.weight, "bias": self.bias}

    def __call__(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, width: int):
        super().__init__()
        self.gain = Tensor(np.ones(width), requires_grad=True)
        self.bias = Tensor(np.zeros(width), requires_grad=True)
        self._params = {"gain": self.gain, "bias": self.bias}

    def __call__(self, x: Tensor) -> Tensor:
        return F.layer_norm(x, self.gain, self.bias)


class Encoder(Module):
    """[linear m->h, norm, gelu, linear h->h, norm, gelu]."""

    def __init__(self, in_dim: int, hidden: int, rng: np.random.Generator):
        super().__init__()
        self.linear0 = Linear(in_dim, hidden, rng)
        self.norm0 = LayerNorm(hidden)
        self.linear1 = Linear(hidden, hidden, rng)
        self.norm1 = LayerNorm(hidden)
        self._children = {"linear0": self.linear0, "norm0": self.norm0,
                          "linear1": self.linear1, "norm1": self.norm1}

    def __call__(self, x: Tensor) -> Tensor:
        x = F.gelu(self.norm0(self.linear0(x)))
        return F.gelu(self.norm1(self.linear1(x)))


class Reconstructer(Module):
    """[linear h->m, norm(m), gelu, linear m->m]."""

    def __init__(self, hidden: int, out_dim: int, rng: np.random.Generator):
        super().__init__()
        self.linear0 = Linear(hidden, out_dim, rng)
        self.norm0 = LayerNorm(out_dim)
        self.linear1 = Linear(out_dim, out_dim, rng)
        self._children = {"linear0": self.linear0, "norm0": self.norm0, "linear1": self.linear1}

    def __call__(self, x: Tensor) -> Tensor:
        return self.linear1(F.gelu(self.norm0(self.linear0(x))))


class ResFuse(Module):
    """f(concat(s, r)) + r, with f = [linear 2h->h, norm, gelu, dropout]."""

    def __init__(self, hidden: int, dropout_p: float, rng: np.random.Generator):
        super().__init__()
        self.dropout_p = dropout_p
        self.linear0 = Linear(2 * hidden, hidden, rng)
        self.norm0 = LayerNorm(hidden)
        self._children = {"linear0": self.linear0, "norm0": self.norm0}

    def __call__(self, s: Tensor, r: Tensor, training: bool = False,
                 rng: np.random.Generator | None = None) -> Tensor:
        fused = F.gelu(self.norm0(self.linear0(F.concat_last(s, r))))
        return F.add(F.dropout(fused, self.dropout_p, training, rng), r)


class ResidualBlock(Module):
    def __init__(self, hidden: int, dropout_p: float, rng: np.random.Generator):
        super().__init__()
        self.dropout_p = dropout_p
        self.linear0 = Linear(hidden, hidden, rng)
        self.norm0 = LayerNorm(hidden)
        self._children = {"linear0": self.linear0, "norm0": self.norm0}

    def __call__(self, x: Tensor, training: bool = False,
                 rng: np.random.Generator | None = None) -> Tensor:
        y = F.gelu(self.norm0(self.linear0(x)))
        return F.add(x, F.dropout(y, self.dropout_p, training, rng))


class SharedDecoder(Module):
    """Two residual blocks; the semantic head sits on top of it."""

    def __init__(self, hidden: int, dropout_p: float, rng: np.random.Generator):
        super().__init__()
        self.blocks = [ResidualBlock(hidden, dropout_p, rng) for _ in range(2)]
        self._children = {f"block{i}": block for i, block in enumerate(self.blocks)}

    def __call__(self, x: Tensor, training: bool = False,
                 rng: np.random.Generator | None = None) -> Tensor:
        for block in self.blocks:
            x = block(x, training, rng)
        return x


class DomainClassifier(Module):
    """[linear h->h, gelu, linear h->N]."""

    def __init__(self, hidden: int, n_domains: int, rng: np.random.Generator):
        super().__init__()
        self.linear0 = Linear(hidden, hidden, rng)
        self.linear1 = Linear(hidden, n_domains, rng)
        self._children = {"linear0": self.linear0, "linear1": self.linear1}

    def __call__(self, x: Tensor) -> Tensor:
        return self.linear1(F.gelu(self.linear0(x)))
