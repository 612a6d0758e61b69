"""Independent reference implementations used by the tests."""
from __future__ import annotations

from fractions import Fraction

import torch

from citeintent.prompt import render
from citeintent.training import VerbalizerHead


def brute_force_metrics(gold, pred, labels):
    """Accuracy and macro-F1 by explicit counting in exact rational arithmetic."""
    n = len(gold)
    correct = sum(1 for g, p in zip(gold, pred) if g == p)
    f1s = []
    for lab in labels:
        tp = sum(1 for g, p in zip(gold, pred) if g == lab and p == lab)
        fp = sum(1 for g, p in zip(gold, pred) if g != lab and p == lab)
        fn = sum(1 for g, p in zip(gold, pred) if g == lab and p != lab)
        precision = Fraction(tp, tp + fp) if tp + fp else Fraction(0)
        recall = Fraction(tp, tp + fn) if tp + fn else Fraction(0)
        f1s.append(2 * precision * recall / (precision + recall) if precision + recall else Fraction(0))
    return float(Fraction(correct, n)), float(sum(f1s) / len(f1s))


def batch_loss(mlm, verbalizer, template, instances, labels, max_length=512):
    head = VerbalizerHead(verbalizer, mlm.vocab, dtype=torch.float64)
    prompts = [render(template, inst) for inst in instances]
    gold = torch.tensor([labels.index(inst.label) for inst in instances])
    with torch.no_grad():
        return float(head.loss(mlm.mask_logits(prompts, max_length).double(), gold))


def finite_difference_check(loss_fn, params, n_probe=12, eps=1e-6, seed=0):
    """Max relative error between autograd and central differences on sampled coordinates."""
    for p in params:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    gen = torch.Generator().manual_seed(seed)
    worst = 0.0
    for p in params:
        flat, grad = p.data.view(-1), p.grad.view(-1)
        for i in torch.randperm(flat.numel(), generator=gen)[:n_probe].tolist():
            orig = flat[i].item()
            with torch.no_grad():
                flat[i] = orig + eps
                up = loss_fn().item()
                flat[i] = orig - eps
                down = loss_fn().item()
                flat[i] = orig
            numeric = (up - down) / (2 * eps)
            analytic = grad[i].item()
            scale = max(abs(numeric), abs(analytic), 1e-8)
            worst = max(worst, abs(numeric - analytic) / scale)
    return worst
