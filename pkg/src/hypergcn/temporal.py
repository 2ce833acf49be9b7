"""Multi-scale temporal convolution.

Four branches, each owning a quarter of the output channels:

* 1x1 reduce -> BN -> ReLU -> temporal conv (kernel 5, dilation 1) -> BN
* 1x1 reduce -> BN -> ReLU -> temporal conv (kernel 5, dilation 2) -> BN
* 1x1 reduce -> BN -> ReLU -> temporal max-pool (window 3) -> BN
* 1x1 reduce (strided) -> BN

The stride is shared by all branches, so every branch yields ``ceil(T/s)``
frames.  Nothing mixes joints.
"""
from __future__ import annotations

import numpy as np

from .errors import ShapeMismatch
from .nn import BatchNorm, Conv1x1, Module, ReLU, TemporalConv, TemporalMaxPool


class _Branch(Module):
    def __init__(self, cin, cout, kind, stride, rng, activation=True):
        super().__init__()
        self.kind = kind
        if kind == "pointwise":
            self.reduce = self.add_child("reduce", Conv1x1(cin, cout, stride=stride, rng=rng))
            self.bn = self.add_child("bn", BatchNorm(cout))
            self.seq = [self.reduce, self.bn]
            return
        self.reduce = self.add_child("reduce", Conv1x1(cin, cout, rng=rng))
        self.bn_reduce = self.add_child("bn_reduce", BatchNorm(cout))
        self.relu = self.add_child("relu", ReLU(activation))
        if kind == "pool":
            # with nonlinearities off the pool degrades to a strided pick
            self.op = self.add_child("pool", TemporalMaxPool(3 if activation else 1, stride))
        else:
            dilation = {"conv_d1": 1, "conv_d2": 2}[kind]
            self.op = self.add_child("conv", TemporalConv(cout, 5, dilation, stride, rng=rng))
        self.bn = self.add_child("bn", BatchNorm(cout))
        self.seq = [self.reduce, self.bn_reduce, self.relu, self.op, self.bn]

    def forward(self, x):
        for layer in self.seq:
            x = layer.forward(x)
        return x

    def backward(self, dy):
        for layer in reversed(self.seq):
            dy = layer.backward(dy)
        return dy


class MultiScaleTemporalConv(Module):
    KINDS = ("conv_d1", "conv_d2", "pool", "pointwise")

    def __init__(self, cin, cout, stride=1, rng=None, activation=True):
        super().__init__()
        if cout % 4:
            raise ShapeMismatch(f"output channels must be divisible by 4, got {cout}")
        if stride not in (1, 2):
            raise ValueError("stride must be 1 or 2")
        rng = np.random.default_rng() if rng is None else rng
        self.cin, self.cout, self.stride = cin, cout, stride
        bc = cout // 4
        self.branches = [self.add_child(f"branch{i}", _Branch(cin, bc, kind, stride, rng, activation))
                         for i, kind in enumerate(self.KINDS)]

    def forward(self, x):
        if x.shape[1] != self.cin:
            raise ShapeMismatch(f"expected {self.cin} channels, got {x.shape[1]}")
        return np.concatenate([b.forward(x) for b in self.branches], axis=1)

    def backward(self, dy):
        parts = np.split(dy, 4, axis=1)
        dx = None
        for b, d in zip(self.branches, parts):
            g = b.backward(d)
            dx = g if dx is None else dx + g
        return dx

    def flops(self, T_in, V):
        total = 0
        for b in self.branches:
            total += b.reduce.flops(T_in, V)
            if b.kind.startswith("conv"):
                total += b.op.flops(T_in, V)
        return total
