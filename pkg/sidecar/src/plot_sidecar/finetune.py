"""Reference fine-tuning recipe for the figure classifier.

Fine-tunes an ImageNet-pretrained ResNet-152 on a figure dataset laid out
for torchvision's ImageFolder (one directory per taxonomy class, named
exactly as in plot_sidecar.classes). Defaults reproduce the recipe the
shipped weights came from: 19k/13k train/test split, Adam at 1e-3 for 20
epochs. The resulting test F1 is informational; nothing downstream asserts
on it. Requires the `train` extra (torch + torchvision); the service and
its tests never import this module.

Usage:
    python -m plot_sidecar.finetune --data-root figures/ --out resnet152.pt
"""

from __future__ import annotations

import argparse

from .classes import CLASS_NAMES

DEFAULT_EPOCHS = 20
DEFAULT_LR = 1e-3
DEFAULT_TRAIN_COUNT = 19_000
DEFAULT_TEST_COUNT = 13_000


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--data-root", required=True, help="ImageFolder root, one subdir per class")
    parser.add_argument("--out", required=True, help="where to write the trained state dict")
    parser.add_argument("--epochs", type=int, default=DEFAULT_EPOCHS)
    parser.add_argument("--lr", type=float, default=DEFAULT_LR)
    parser.add_argument("--batch-size", type=int, default=32)
    parser.add_argument("--train-count", type=int, default=DEFAULT_TRAIN_COUNT)
    parser.add_argument("--test-count", type=int, default=DEFAULT_TEST_COUNT)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--workers", type=int, default=2)
    return parser


def macro_f1(confusion) -> float:
    """Unweighted mean of per-class F1 over classes that actually occur."""
    scores = []
    for i in range(confusion.shape[0]):
        tp = float(confusion[i, i])
        fp = float(confusion[:, i].sum()) - tp
        fn = float(confusion[i, :].sum()) - tp
        if tp + fp + fn == 0:
            continue
        scores.append(2 * tp / (2 * tp + fp + fn))
    return sum(scores) / len(scores) if scores else 0.0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)

    import torch
    from torch.utils.data import DataLoader, random_split
    from torchvision import datasets, models, transforms

    torch.manual_seed(args.seed)
    device = torch.device(args.device)

    transform = transforms.Compose(
        [
            transforms.Resize(256),
            transforms.CenterCrop(224),
            transforms.ToTensor(),
            transforms.Normalize((0.485, 0.456, 0.406), (0.229, 0.224, 0.225)),
        ]
    )
    dataset = datasets.ImageFolder(args.data_root, transform=transform)
    folder_classes = tuple(dataset.classes)
    if set(folder_classes) != set(CLASS_NAMES):
        missing = set(CLASS_NAMES) - set(folder_classes)
        extra = set(folder_classes) - set(CLASS_NAMES)
        raise SystemExit(f"class directories must match the published taxonomy (missing {missing}, extra {extra})")
    # ImageFolder sorts directories; remap its indices onto taxonomy order
    remap = {dataset.class_to_idx[name]: i for i, name in enumerate(CLASS_NAMES)}
    dataset.target_transform = lambda label: remap[label]

    spare = len(dataset) - args.train_count - args.test_count
    if spare < 0:
        raise SystemExit(f"dataset has {len(dataset)} samples, need {args.train_count + args.test_count}")
    train_set, test_set, _ = random_split(
        dataset,
        [args.train_count, args.test_count, spare],
        generator=torch.Generator().manual_seed(args.seed),
    )
    train_loader = DataLoader(train_set, batch_size=args.batch_size, shuffle=True, num_workers=args.workers)
    test_loader = DataLoader(test_set, batch_size=args.batch_size, num_workers=args.workers)

    model = models.resnet152(weights=models.ResNet152_Weights.IMAGENET1K_V1)
    model.fc = torch.nn.Linear(model.fc.in_features, len(CLASS_NAMES))
    model = model.to(device)
    optimizer = torch.optim.Adam(model.parameters(), lr=args.lr)
    criterion = torch.nn.CrossEntropyLoss()

    for epoch in range(1, args.epochs + 1):
        model.train()
        running = 0.0
        for images, labels in train_loader:
            images, labels = images.to(device), labels.to(device)
            optimizer.zero_grad()
            loss = criterion(model(images), labels)
            loss.backward()
            optimizer.step()
            running += float(loss) * len(labels)
        print(f"epoch {epoch}/{args.epochs} train loss {running / len(train_set):.4f}")

    model.eval()
    confusion = torch.zeros(len(CLASS_NAMES), len(CLASS_NAMES), dtype=torch.long)
    with torch.no_grad():
        for images, labels in test_loader:
            predicted = model(images.to(device)).argmax(dim=1).cpu()
            for truth, guess in zip(labels, predicted):
                confusion[int(truth), int(guess)] += 1
    print(f"test macro F1: {macro_f1(confusion):.4f}")

    torch.save(model.state_dict(), args.out)
    print(f"saved {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
