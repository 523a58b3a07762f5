import cisrec
from cisrec.baselines import train_bpr
from cisrec.config import BPRConfig, TrainConfig
from cisrec.dataset import split, to_implicit
from cisrec.eval import build_protocol_all_unobserved, evaluate
from cisrec.synthetic import planted_partition

# TEST
data = to_implicit(planted_partition(seed=0).ratings, 4.0)
train, valid, test = split(data, (0.8, 0.1, 0.1), seed=0)

flat = cisrec.train_flat(train, TrainConfig(epochs=5), dim=4)
tree = cisrec.learn_tree(train, flat.user_factors)
hier = cisrec.finetune(cisrec.HierModel(flat.user_factors, tree), train, TrainConfig(epochs=5))
bpr = train_bpr(train, BPRConfig(samples_per_pair=10), dim=4)

tasks = build_protocol_all_unobserved(train, test)
for name, model in (("flat", flat), ("cis-learned", hier), ("bpr", bpr)):
    print(evaluate(model.score_items, tasks, model=name).to_row())
