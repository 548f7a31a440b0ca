"""Standard component library: shape-complete mutators for common layers.

The contracts mirror the runtime behaviour of the wrapped layers (floor
convolution arithmetic, channel checks via ``props`` pattern terms), so that
shape validation and an actual forward pass agree.  ``build_std_package``
lays the set out as a publishable package directory.
"""

from __future__ import annotations

from pathlib import Path

from .diagnostics import dumps_canonical
from .documents import component_filename, mutator_to_doc
from .model import FORMAT_VERSION, Mutator, ParamSpec
from .shapes import parse_output_expr, parse_pattern

STD_VERSION = "0.1.0"

_NCHW = ["N", "C", "H", "W"]
_APPLY = "${output} = self.${name}(${input})"


def _int(name: str, required: bool = False, default: int | None = None, minimum: int | None = None) -> ParamSpec:
    return ParamSpec(name=name, ptype="int", required=required, default=default, min=minimum)


def conv2d() -> Mutator:
    down = "(in[0][{ax}] + 2 * props.padding - props.kernel_size) // props.stride + 1"
    return Mutator(
        id="std/conv2d",
        imports=("import torch.nn as nn",),
        input_count=1,
        output_count=1,
        input_patterns=(parse_pattern(["N", "props.in_channels", "H", "W"]),),
        output_exprs=(parse_output_expr([
            "in[0][0]", "props.out_channels", down.format(ax=2), down.format(ax=3),
        ]),),
        params=(
            _int("in_channels", required=True, minimum=1),
            _int("out_channels", required=True, minimum=1),
            _int("kernel_size", required=True, minimum=1),
            _int("stride", default=1, minimum=1),
            _int("padding", default=0, minimum=0),
            ParamSpec(name="bias", ptype="bool", default=True),
        ),
        init_code=(
            "self.${name} = nn.Conv2d(${props.in_channels}, ${props.out_channels}, "
            "kernel_size=${props.kernel_size}, stride=${props.stride}, "
            "padding=${props.padding}, bias=${props.bias})"
        ),
        forward_code=_APPLY,
    )


def batch_norm2d() -> Mutator:
    return Mutator(
        id="std/batch_norm2d",
        imports=("import torch.nn as nn",),
        input_count=1,
        output_count=1,
        input_patterns=(parse_pattern(["N", "props.num_features", "H", "W"]),),
        output_exprs=(parse_output_expr("in[0]"),),
        params=(_int("num_features", required=True, minimum=1),),
        init_code="self.${name} = nn.BatchNorm2d(${props.num_features})",
        forward_code=_APPLY,
    )


def relu() -> Mutator:
    return Mutator(
        id="std/relu",
        imports=("import torch.nn as nn",),
        input_count=1,
        output_count=1,
        output_exprs=(parse_output_expr("in[0]"),),
        init_code="self.${name} = nn.ReLU()",
        forward_code=_APPLY,
    )


def identity() -> Mutator:
    return Mutator(
        id="std/identity",
        imports=("import torch.nn as nn",),
        input_count=1,
        output_count=1,
        output_exprs=(parse_output_expr("in[0]"),),
        init_code="self.${name} = nn.Identity()",
        forward_code=_APPLY,
    )


def max_pool2d() -> Mutator:
    down = "(in[0][{ax}] + 2 * props.padding - props.kernel_size) // props.stride + 1"
    return Mutator(
        id="std/max_pool2d",
        imports=("import torch.nn as nn",),
        input_count=1,
        output_count=1,
        input_patterns=(parse_pattern(_NCHW),),
        output_exprs=(parse_output_expr([
            "in[0][0]", "in[0][1]", down.format(ax=2), down.format(ax=3),
        ]),),
        params=(
            _int("kernel_size", required=True, minimum=1),
            _int("stride", default=1, minimum=1),
            _int("padding", default=0, minimum=0),
        ),
        init_code=(
            "self.${name} = nn.MaxPool2d(${props.kernel_size}, "
            "stride=${props.stride}, padding=${props.padding})"
        ),
        forward_code=_APPLY,
    )


def adaptive_avg_pool2d() -> Mutator:
    return Mutator(
        id="std/adaptive_avg_pool2d",
        imports=("import torch.nn as nn",),
        input_count=1,
        output_count=1,
        input_patterns=(parse_pattern(_NCHW),),
        output_exprs=(parse_output_expr([
            "in[0][0]", "in[0][1]", "props.output_size", "props.output_size",
        ]),),
        params=(_int("output_size", required=True, minimum=1),),
        init_code="self.${name} = nn.AdaptiveAvgPool2d(${props.output_size})",
        forward_code=_APPLY,
    )


def flatten() -> Mutator:
    return Mutator(
        id="std/flatten",
        imports=("import torch.nn as nn",),
        input_count=1,
        output_count=1,
        input_patterns=(parse_pattern(_NCHW),),
        output_exprs=(parse_output_expr(["in[0][0]", "in[0][1] * in[0][2] * in[0][3]"]),),
        init_code="self.${name} = nn.Flatten()",
        forward_code=_APPLY,
    )


def linear() -> Mutator:
    return Mutator(
        id="std/linear",
        imports=("import torch.nn as nn",),
        input_count=1,
        output_count=1,
        input_patterns=(parse_pattern(["N", "props.in_features"]),),
        output_exprs=(parse_output_expr(["in[0][0]", "props.out_features"]),),
        params=(
            _int("in_features", required=True, minimum=1),
            _int("out_features", required=True, minimum=1),
            ParamSpec(name="bias", ptype="bool", default=True),
        ),
        init_code=(
            "self.${name} = nn.Linear(${props.in_features}, ${props.out_features}, "
            "bias=${props.bias})"
        ),
        forward_code=_APPLY,
    )


def shortcut_projection() -> Mutator:
    """Identity when shape-preserving, otherwise a strided 1x1 projection."""
    down = "(in[0][{ax}] - 1) // props.stride + 1"
    return Mutator(
        id="std/shortcut_projection",
        imports=("import torch.nn as nn",),
        input_count=1,
        output_count=1,
        input_patterns=(parse_pattern(["N", "props.in_channels", "H", "W"]),),
        output_exprs=(parse_output_expr([
            "in[0][0]", "props.out_channels", down.format(ax=2), down.format(ax=3),
        ]),),
        params=(
            _int("in_channels", required=True, minimum=1),
            _int("out_channels", required=True, minimum=1),
            _int("stride", default=1, minimum=1),
        ),
        init_code=(
            "if ${props.stride} != 1 or ${props.in_channels} != ${props.out_channels}:\n"
            "    self.${name} = nn.Sequential(\n"
            "        nn.Conv2d(${props.in_channels}, ${props.out_channels}, "
            "kernel_size=1, stride=${props.stride}, bias=False),\n"
            "        nn.BatchNorm2d(${props.out_channels}),\n"
            "    )\n"
            "else:\n"
            "    self.${name} = nn.Identity()"
        ),
        forward_code=_APPLY,
    )


def channel_scale() -> Mutator:
    """Learnable scalar gain; carries a custom layer class as extra code."""
    return Mutator(
        id="std/channel_scale",
        imports=("import torch", "import torch.nn as nn"),
        input_count=1,
        output_count=1,
        output_exprs=(parse_output_expr("in[0]"),),
        params=(ParamSpec(name="init_value", ptype="float", default=1.0),),
        extra_code=(
            "class ScalarGain(nn.Module):\n"
            "    def __init__(self, init_value):\n"
            "        super().__init__()\n"
            "        self.weight = nn.Parameter(torch.full((1,), float(init_value)))\n"
            "\n"
            "    def forward(self, x):\n"
            "        return x * self.weight"
        ),
        init_code="self.${name} = ScalarGain(${props.init_value})",
        forward_code=_APPLY,
    )


def standard_mutators() -> tuple[Mutator, ...]:
    return (
        conv2d(),
        batch_norm2d(),
        relu(),
        identity(),
        max_pool2d(),
        adaptive_avg_pool2d(),
        flatten(),
        linear(),
        shortcut_projection(),
        channel_scale(),
    )


def std_manifest_doc(version: str = STD_VERSION) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "name": "std",
        "version": version,
        "components": sorted(m.id for m in standard_mutators()),
        "docs": "README.md",
        "weights": [],
        "dependencies": {},
    }


def build_std_package(target: Path, version: str = STD_VERSION) -> Path:
    """Write the standard library as a publishable package directory."""
    target = Path(target)
    (target / "mutators").mkdir(parents=True, exist_ok=True)
    manifest = std_manifest_doc(version)
    (target / "manifest.json").write_text(dumps_canonical(manifest), encoding="utf-8")
    (target / "README.md").write_text(
        "Standard layer components: convolution, normalization, activation,\n"
        "pooling, flatten, linear, shortcut projection and scalar gain.\n",
        encoding="utf-8",
    )
    for mutator in standard_mutators():
        path = target / "mutators" / component_filename(mutator.id)
        path.write_text(dumps_canonical(mutator_to_doc(mutator)), encoding="utf-8")
    return target
