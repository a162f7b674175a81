"""The twelve supported architecture names and their feature-tap surgery.

Each entry knows how to build the torchvision network and truncate it at
the pooled penultimate activation (the classification head is replaced,
never retrained). InceptionResNetV2 and NASNetMobile have no torchvision
builders; they are recognized names that report a missing optional
backend (timm) instead of "unsupported".
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

IMAGENET_MEANS = (0.485, 0.456, 0.406)
IMAGENET_STDS = (0.229, 0.224, 0.225)


class UnsupportedArchitectureError(ValueError):
    """Raised for names outside the supported list."""


class WeightsUnavailableError(RuntimeError):
    """Raised when an architecture's weights source cannot be used here."""


@dataclass(frozen=True)
class ArchInfo:
    name: str
    input_size: int
    builder: Callable | None  # None: recognized but needs an absent backend
    note: str = ""


def _drop_linear_head(attr: str):
    def surgery(model):
        import torch.nn as nn

        setattr(model, attr, nn.Identity())
        return model

    return surgery


def _replace_indexed(model, attr: str, index: int):
    import torch.nn as nn

    getattr(model, attr)[index] = nn.Identity()
    return model


def _build(factory_name: str, weights, **kwargs):
    from torchvision import models

    return getattr(models, factory_name)(weights=weights, **kwargs)


def _make_builder(factory_name: str, head: str, index: int | None = None, **build_kwargs):
    def builder(pretrained: bool):
        from torchvision import models

        if pretrained:
            weights = getattr(models, "get_model_weights")(factory_name).DEFAULT
            model = _build(factory_name, weights)
        else:
            model = _build(factory_name, None, **build_kwargs)
        if index is None:
            model = _drop_linear_head(head)(model)
        else:
            model = _replace_indexed(model, head, index)
        return model

    return builder


def _squeezenet_builder(pretrained: bool):
    import torch.nn as nn
    from torchvision import models

    weights = models.SqueezeNet1_0_Weights.DEFAULT if pretrained else None
    model = models.squeezenet1_0(weights=weights)
    # head is convolutional; the pooled penultimate activation is the
    # global average over the backbone's 512 feature maps
    model.classifier = nn.AdaptiveAvgPool2d((1, 1))
    return model


ARCHS: dict[str, ArchInfo] = {
    "AlexNet": ArchInfo("AlexNet", 224, _make_builder("alexnet", "classifier", 6)),
    "DenseNet": ArchInfo(
        "DenseNet", 224, _make_builder("densenet121", "classifier"), note="mapped to densenet121"
    ),
    "GoogleNet": ArchInfo(
        "GoogleNet", 224, _make_builder("googlenet", "fc", init_weights=True)
    ),
    "InceptionResNetV2": ArchInfo(
        "InceptionResNetV2", 299, None, note="needs the timm package (not installed)"
    ),
    "InceptionV3": ArchInfo(
        "InceptionV3",
        299,
        _make_builder("inception_v3", "fc", aux_logits=True, init_weights=True),
    ),
    "MobileNetV2": ArchInfo("MobileNetV2", 224, _make_builder("mobilenet_v2", "classifier", 1)),
    "NASNetMobile": ArchInfo(
        "NASNetMobile", 224, None, note="needs the timm package (not installed)"
    ),
    "ResNet18": ArchInfo("ResNet18", 224, _make_builder("resnet18", "fc")),
    "ResNet50": ArchInfo("ResNet50", 224, _make_builder("resnet50", "fc")),
    "ResNet101": ArchInfo("ResNet101", 224, _make_builder("resnet101", "fc")),
    "ShuffleNet": ArchInfo(
        "ShuffleNet", 224, _make_builder("shufflenet_v2_x1_0", "fc"), note="shufflenet_v2_x1_0"
    ),
    "SqueezeNet": ArchInfo("SqueezeNet", 224, _squeezenet_builder, note="squeezenet1_0"),
}


def lookup(name: str) -> ArchInfo:
    if name not in ARCHS:
        raise UnsupportedArchitectureError(
            f"unsupported architecture {name!r}; supported: {', '.join(ARCHS)}"
        )
    return ARCHS[name]


def buildable_names() -> list[str]:
    return [name for name, info in ARCHS.items() if info.builder is not None]
