from momakd.config import RunConfig


def fast_config(**kw):
    """A small task that trains in well under a second."""
    base = dict(input_dim=6, encoder_hidden=(12,), embed_dim=8, proj_dim=8, heads=2, source_classes=3,
                target_classes=3, center_scale=2.0, noise=1.0, shift=0.5, target_per_class=8,
                eval_per_class=30, source_ratio=4, batch_size=8, queue_size=32, epochs=4,
                pretrain_epochs=4, lr=5e-3, seed=0)
    base.update(kw)
    return RunConfig(**base)


def separable_config(**kw):
    base = dict(input_dim=4, encoder_hidden=(8,), embed_dim=8, proj_dim=8, heads=2, source_classes=2,
                target_classes=2, center_scale=4.0, noise=0.5, shift=0.5, target_per_class=32,
                eval_per_class=100, source_ratio=4, batch_size=16, queue_size=32, epochs=25,
                pretrain_epochs=12, lr=1e-2, seed=0)
    base.update(kw)
    return RunConfig(**base)
