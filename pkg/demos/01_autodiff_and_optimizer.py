"""Tour of the tensor engine: build expressions, backpropagate, check the
gradients against finite differences, then fit a tiny least-squares problem
with the ADAM optimizer and its linear learning-rate schedule.

Run:  python demos/01_autodiff_and_optimizer.py
"""

import numpy as np

from rrnet.checks import gradcheck
from rrnet.optim import Adam, LinearSchedule
from rrnet.tensor import Tensor, conv2d, relu, sigmoid, tensor_sum

rng = np.random.default_rng(0)

# -- 1. a scalar chain, backpropagated by hand-checkable rules --------------------

x = Tensor([1.0, -2.0, 3.0], requires_grad=True, dtype=np.float64)
loss = tensor_sum(x * x)  # d/dx sum(x^2) = 2x
loss.backward()
print("sum(x^2) at", x.data, "-> grad", x.grad)

# -- 2. every op agrees with central finite differences ----------------------------

img = Tensor(rng.standard_normal((6, 6, 2)), requires_grad=True, dtype=np.float64)
kernel = Tensor(rng.standard_normal((3, 3, 2, 3)), requires_grad=True, dtype=np.float64)
result = gradcheck(
    lambda: tensor_sum(sigmoid(conv2d(img, kernel)) ** 2.0),
    [("image", img), ("kernel", kernel)],
)
print(f"conv+sigmoid gradient check: ok={result.ok} (max rel err {result.max_rel_error:.2e})")

# -- 3. ADAM with the linear schedule fits a small regression ----------------------

w_true = rng.standard_normal((4, 1))
inputs = rng.standard_normal((64, 4))
targets = inputs @ w_true

w = Tensor(np.zeros((4, 1)), requires_grad=True, dtype=np.float64)
steps = 400
adam = Adam({"w": w}, LinearSchedule(5e-2, 5e-4, steps))
for step in range(1, steps + 1):
    w.zero_grad()
    pred = Tensor(inputs, dtype=np.float64) @ w
    err = pred - Tensor(targets, dtype=np.float64)
    loss = tensor_sum(err * err) * (1.0 / len(inputs))
    loss.backward()
    lr = adam.step()
    if step % 100 == 0 or step == 1:
        print(f"step {step:4d}  mse {loss.item():.6f}  lr {lr:.1e}")
print("recovered weights:", np.round(w.data.ravel(), 4))
print("true weights:     ", np.round(w_true.ravel(), 4))

# -- 4. relu keeps the tape honest: grad flows only through active units -----------

z = Tensor([-1.0, 2.0], requires_grad=True, dtype=np.float64)
tensor_sum(relu(z)).backward()
print("relu gate grads:", z.grad, "(zero where the unit was off)")
