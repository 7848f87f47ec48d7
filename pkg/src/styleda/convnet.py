"""Plain (2×2 average pool →) conv → bias → ReLU stacks with a hand-written backward pass.

Both the recognition backbone and the discriminator's feature extractor are
built from these blocks.  ``forward`` returns every block output together with
a :class:`Tape` holding what ``backward`` needs; the architecture is fixed, so
the tape is just the per-block inputs and pre-activations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import DTYPE, ShapeError, conv2d_backward, conv2d_cols, conv_output_size

KERNEL = 3


@dataclass(frozen=True)
class ConvStack:
    in_channels: int
    in_size: int
    blocks: tuple  # ((out_channels, pool), ...) with pool in {1, 2}

    def shapes(self):
        """Output (C, H, W) of every block."""
        out, h = [], self.in_size
        for c_out, pool in self.blocks:
            if pool not in (1, 2) or h % pool:
                raise ShapeError(f"cannot pool extent {h} by {pool}")
            h = conv_output_size(h // pool, KERNEL, 1, KERNEL // 2)
            out.append((c_out, h, h))
        return out

    def init_params(self, rng, prefix="conv"):
        params = {}
        c_in = self.in_channels
        for i, (c_out, _) in enumerate(self.blocks, start=1):
            fan_in = c_in * KERNEL * KERNEL
            params[f"{prefix}{i}.w"] = rng.normal((c_out, c_in, KERNEL, KERNEL), scale=np.sqrt(2.0 / fan_in))
            params[f"{prefix}{i}.b"] = np.zeros(c_out)
            c_in = c_out
        return params


@dataclass
class Tape:
    inputs: list = field(default_factory=list)
    pre: list = field(default_factory=list)
    cols: list = field(default_factory=list)


def forward(stack, params, x, prefix="conv"):
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim != 4 or x.shape[1:] != (stack.in_channels, stack.in_size, stack.in_size):
        raise ShapeError(
            f"expected N×{stack.in_channels}×{stack.in_size}×{stack.in_size} input, got {x.shape}"
        )
    stack.shapes()
    tape = Tape()
    outputs = []
    h = x
    for i, (_, pool) in enumerate(stack.blocks, start=1):
        if pool == 2:
            h = avg_pool2(h)
        tape.inputs.append(h)
        z, cols = conv2d_cols(h, params[f"{prefix}{i}.w"], padding=KERNEL // 2)
        z += params[f"{prefix}{i}.b"][None, :, None, None]
        tape.pre.append(z)
        tape.cols.append(cols)
        h = np.maximum(z, 0.0)
        outputs.append(h)
    return outputs, tape


def avg_pool2(x):
    n, c, h, w = x.shape
    return x.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))


def avg_pool2_backward(d_out):
    return np.repeat(np.repeat(d_out, 2, axis=2), 2, axis=3) * 0.25


def backward(stack, params, tape, d_outputs, prefix="conv"):
    """Parameter gradients given d loss / d (block output) for each block.

    ``d_outputs`` is a list aligned with the blocks; ``None`` entries mean no
    direct gradient on that block's output.
    """
    grads = {}
    d_h = None
    for i in range(len(stack.blocks), 0, -1):
        direct = d_outputs[i - 1]
        if direct is not None:
            d_h = direct if d_h is None else d_h + direct
        if d_h is None:
            grads[f"{prefix}{i}.w"] = np.zeros_like(params[f"{prefix}{i}.w"])
            grads[f"{prefix}{i}.b"] = np.zeros_like(params[f"{prefix}{i}.b"])
            continue
        d_z = d_h * (tape.pre[i - 1] > 0)
        grads[f"{prefix}{i}.b"] = d_z.sum(axis=(0, 2, 3))
        d_in, grads[f"{prefix}{i}.w"] = conv2d_backward(
            tape.inputs[i - 1], params[f"{prefix}{i}.w"], d_z, padding=KERNEL // 2,
            cols=tape.cols[i - 1], input_grad=i > 1,
        )
        if i > 1 and stack.blocks[i - 1][1] == 2:
            d_in = avg_pool2_backward(d_in)
        d_h = d_in if i > 1 else None
    return grads
