"""Check the analytic gradients against finite differences, then train a toy model."""

from vprkit.fusion import LossConfig
from vprkit.gradcheck import check_gradients
from vprkit.train import (GRADCHECK_SPEC, SyntheticSpec, analytic_gradients, batch_loss, init_model,
                          make_synthetic, toy_train)

spec = GRADCHECK_SPEC
data = make_synthetic(spec, seed=0)
cfg = LossConfig(n_pos=1, n_neg=spec.n_neg)
params = init_model(spec.k_v, spec.k_s, spec.d_v, seed=0)

grad = analytic_gradients(data.samples, data.tuples, params, cfg)
report = check_gradients(lambda th: batch_loss(data.samples, data.tuples, th, cfg), grad.values, params)
for line in report.lines():
    print(line)
print("passed:", report.passed(1e-4))

result = toy_train(SyntheticSpec(), steps=50, lr=0.3, seed=0)
print(result.trace_csv().splitlines()[0])
for row in result.trace_csv().splitlines()[1:6]:
    print(row)
print("loss", round(result.losses[0], 4), "->", round(result.losses[-1], 4))
