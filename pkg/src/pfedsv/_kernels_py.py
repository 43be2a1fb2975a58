"""Pure-numpy kernels: forward pass, metrics, gradients, and one SGD epoch.

Mirrors the compiled module in pfedsv._kernels; either can back the learner.
Parameter layout for a flat vector `theta`:

  linear           [W (input_dim x classes, row-major), b (classes)]
  one hidden layer [W1 (input_dim x hidden), b1 (hidden),
                    W2 (hidden x classes), b2 (classes)]
"""

import numpy as np

PROB_FLOOR = 1e-12

BACKEND_NAME = "python"


def _views(theta, input_dim, hidden_dim, num_classes):
    if hidden_dim == 0:
        w_end = input_dim * num_classes
        return (theta[:w_end].reshape(input_dim, num_classes), theta[w_end:])
    p = 0
    w1 = theta[p : p + input_dim * hidden_dim].reshape(input_dim, hidden_dim)
    p += input_dim * hidden_dim
    b1 = theta[p : p + hidden_dim]
    p += hidden_dim
    w2 = theta[p : p + hidden_dim * num_classes].reshape(hidden_dim, num_classes)
    p += hidden_dim * num_classes
    b2 = theta[p:]
    return (w1, b1, w2, b2)


def forward_logits(theta, features, input_dim, hidden_dim, num_classes):
    if hidden_dim == 0:
        w, b = _views(theta, input_dim, hidden_dim, num_classes)
        return features @ w + b
    w1, b1, w2, b2 = _views(theta, input_dim, hidden_dim, num_classes)
    hidden = np.maximum(features @ w1 + b1, 0.0)
    return hidden @ w2 + b2


def _row_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    exps = np.exp(shifted)
    return exps / exps.sum(axis=1, keepdims=True)


def eval_metrics(theta, features, labels, input_dim, hidden_dim, num_classes):
    """Return (accuracy, mean cross-entropy). Argmax ties go to the lowest class."""
    logits = forward_logits(theta, features, input_dim, hidden_dim, num_classes)
    probs = _row_softmax(logits)
    picked = probs[np.arange(len(labels)), labels]
    loss = float(np.mean(-np.log(np.maximum(picked, PROB_FLOOR))))
    accuracy = float(np.mean(np.argmax(logits, axis=1) == labels))
    return accuracy, loss


def loss_and_grad(theta, features, labels, input_dim, hidden_dim, num_classes):
    """Mean cross-entropy over the batch and its gradient w.r.t. theta."""
    n = features.shape[0]
    grad = np.empty_like(theta)
    if hidden_dim == 0:
        w, _ = _views(theta, input_dim, hidden_dim, num_classes)
        logits = forward_logits(theta, features, input_dim, hidden_dim, num_classes)
        probs = _row_softmax(logits)
        picked = probs[np.arange(n), labels]
        loss = float(np.mean(-np.log(np.maximum(picked, PROB_FLOOR))))
        delta = probs
        delta[np.arange(n), labels] -= 1.0
        delta /= n
        w_end = input_dim * num_classes
        grad[:w_end] = (features.T @ delta).ravel()
        grad[w_end:] = delta.sum(axis=0)
        return loss, grad
    w1, b1, w2, b2 = _views(theta, input_dim, hidden_dim, num_classes)
    pre = features @ w1 + b1
    hidden = np.maximum(pre, 0.0)
    logits = hidden @ w2 + b2
    probs = _row_softmax(logits)
    picked = probs[np.arange(n), labels]
    loss = float(np.mean(-np.log(np.maximum(picked, PROB_FLOOR))))
    delta = probs
    delta[np.arange(n), labels] -= 1.0
    delta /= n
    dhidden = delta @ w2.T
    dhidden[pre <= 0.0] = 0.0
    p = 0
    grad[p : p + input_dim * hidden_dim] = (features.T @ dhidden).ravel()
    p += input_dim * hidden_dim
    grad[p : p + hidden_dim] = dhidden.sum(axis=0)
    p += hidden_dim
    grad[p : p + hidden_dim * num_classes] = (hidden.T @ delta).ravel()
    p += hidden_dim * num_classes
    grad[p:] = delta.sum(axis=0)
    return loss, grad


def sgd_epoch(theta, features, labels, order, lr, batch_size, input_dim, hidden_dim, num_classes):
    """One epoch of minibatch SGD in the given visit order; theta updated in place.

    Returns the sample-weighted mean minibatch loss for the epoch.
    """
    n = features.shape[0]
    total = 0.0
    for start in range(0, n, batch_size):
        idx = order[start : start + batch_size]
        loss, grad = loss_and_grad(
            theta, features[idx], labels[idx], input_dim, hidden_dim, num_classes
        )
        theta -= lr * grad
        total += loss * len(idx)
    return total / n
