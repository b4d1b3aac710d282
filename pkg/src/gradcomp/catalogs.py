"""Parameter shape catalogs and compression-ratio reports.

A catalog is an ordered list of named tensor shapes. Tensors with one
dimension are biases and are never compressed; higher-rank tensors are
flattened to matrices with n = first dimension, m = product of the rest.
Ratios are computed in exact rational arithmetic and only rounded for
display (half-up), which is what lets the reports reproduce the reference
tables digit for digit.
"""

from dataclasses import dataclass
from fractions import Fraction
from math import prod

from .linalg import ContractViolation

BITS_PER_SCALAR = 32


@dataclass(frozen=True)
class ParamSpec:
    name: str
    shape: tuple

    def __post_init__(self):
        if len(self.shape) < 1 or any(d < 1 for d in self.shape):
            raise ContractViolation(f"bad shape for {self.name}: {self.shape}")

    @property
    def is_bias(self):
        return len(self.shape) == 1

    @property
    def size(self):
        return prod(self.shape)

    @property
    def matrix_shape(self):
        """(n, m) view used for compression; biases have none."""
        if self.is_bias:
            raise ContractViolation(f"{self.name} is a bias vector")
        return self.shape[0], prod(self.shape[1:])


@dataclass(frozen=True)
class ModelCatalog:
    name: str
    params: tuple
    batches_per_epoch: int = 1


def round_half_up(x):
    """Nearest integer, halves away from zero (positive inputs only)."""
    f = Fraction(x)
    return (2 * f.numerator + f.denominator) // (2 * f.denominator)


def kb_display(n_scalars):
    return round_half_up(Fraction(n_scalars * 4, 1024))

def mb_display_bytes(n_bytes):
    return round_half_up(Fraction(n_bytes, 1024 * 1024))


RESNET18 = ModelCatalog(
    name="resnet18",
    batches_per_epoch=24,
    params=(
        ParamSpec("layer4.1.conv2", (512, 512, 3, 3)),
        ParamSpec("layer4.0.conv2", (512, 512, 3, 3)),
        ParamSpec("layer4.1.conv1", (512, 512, 3, 3)),
        ParamSpec("layer4.0.conv1", (512, 256, 3, 3)),
        ParamSpec("layer3.1.conv2", (256, 256, 3, 3)),
        ParamSpec("layer3.1.conv1", (256, 256, 3, 3)),
        ParamSpec("layer3.0.conv2", (256, 256, 3, 3)),
        ParamSpec("layer3.0.conv1", (256, 128, 3, 3)),
        ParamSpec("layer2.1.conv2", (128, 128, 3, 3)),
        ParamSpec("layer2.1.conv1", (128, 128, 3, 3)),
        ParamSpec("layer2.0.conv2", (128, 128, 3, 3)),
        ParamSpec("layer4.0.shortcut.0", (512, 256, 1, 1)),
        ParamSpec("layer2.0.conv1", (128, 64, 3, 3)),
        ParamSpec("layer1.1.conv1", (64, 64, 3, 3)),
        ParamSpec("layer1.1.conv2", (64, 64, 3, 3)),
        ParamSpec("layer1.0.conv2", (64, 64, 3, 3)),
        ParamSpec("layer1.0.conv1", (64, 64, 3, 3)),
        ParamSpec("layer3.0.shortcut.0", (256, 128, 1, 1)),
        ParamSpec("layer2.0.shortcut.0", (128, 64, 1, 1)),
        ParamSpec("linear", (10, 512)),
        ParamSpec("conv1", (64, 3, 3, 3)),
        ParamSpec("bias_vectors", (9728,)),
    ),
)

# word-level language model; the decoder weight is tied to the encoder, so
# only the decoder bias appears (in the aggregated bias row)
LSTM = ModelCatalog(
    name="lstm",
    batches_per_epoch=70,
    params=(
        ParamSpec("encoder", (28869, 650)),
        ParamSpec("rnn.ih.l0", (2600, 650)),
        ParamSpec("rnn.hh.l0", (2600, 650)),
        ParamSpec("rnn.ih.l1", (2600, 650)),
        ParamSpec("rnn.hh.l1", (2600, 650)),
        ParamSpec("rnn.ih.l2", (2600, 650)),
        ParamSpec("rnn.hh.l2", (2600, 650)),
        ParamSpec("bias_vectors", (44469,)),
    ),
)

BUILTIN_CATALOGS = {c.name: c for c in (RESNET18, LSTM)}


def load_catalog(path):
    """Read a catalog from text: one `name dim1xdim2x...` per line.

    Blank lines and lines starting with # are skipped.
    """
    params = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ContractViolation(
                    f"{path}:{line_no}: expected 'name dims', got {line!r}")
            try:
                shape = tuple(int(d) for d in parts[1].lower().split("x"))
            except ValueError:
                raise ContractViolation(
                    f"{path}:{line_no}: bad dims {parts[1]!r}") from None
            params.append(ParamSpec(parts[0], shape))
    if not params:
        raise ContractViolation(f"{path}: catalog is empty")
    import os
    return ModelCatalog(name=os.path.basename(path), params=tuple(params))


def get_catalog(name_or_path):
    if name_or_path in BUILTIN_CATALOGS:
        return BUILTIN_CATALOGS[name_or_path]
    return load_catalog(name_or_path)


@dataclass
class RatioRow:
    name: str
    tensor_shape: tuple
    matrix_shape: tuple      # None for the bias row
    kb: int                  # rounded KB at 32-bit storage
    coefficient: int         # rank-normalized ratio rounded; None for bias
    ratio_at_rank: Fraction  # exact; None for bias


@dataclass
class RatioReport:
    catalog: str
    compressor: str
    rank: int
    rows: list
    total_mb: int                        # uncompressed model size, rounded MB
    total_coefficient_exact: Fraction    # rank-normalized total, exact
    total_ratio_at_rank: Fraction        # exact at this rank, biases uncompressed
    data_per_epoch_mb: int               # compressed traffic per epoch, rounded
    uncompressed_per_epoch_mb: int

    @property
    def total_coefficient(self):
        """The reference tables' `coefficient/r` numerator."""
        return round_half_up(self.total_coefficient_exact)

    @property
    def total_at_rank_display(self):
        return round_half_up(self.total_ratio_at_rank)

    @property
    def total_coefficient_at_rank(self):
        """The `coefficient/r` form evaluated at the configured rank.

        Rounded from the exact coefficient, not from the displayed one,
        so rank 2 on the large catalog reads 121, not 122.
        """
        return round_half_up(self.total_coefficient_exact / self.rank)


def _aggregate_bias_rows(catalog):
    bias_scalars = sum(p.size for p in catalog.params if p.is_bias)
    return bias_scalars


def ratio_report(catalog, compressor_name, rank=1):
    """Per-tensor and total compression ratios for one scheme.

    The rank-normalized coefficient of a matrix is its ratio at rank 1,
    exact as n*m/(n+m) for the low-rank payload; the table convention
    displays it rounded half-up. Biases are counted uncompressed. Bias
    entries are folded into one total row, as in the reference tables.
    """
    from .compressors import make_compressor
    compressor = make_compressor(compressor_name, rank)
    rows = []
    total_scalars = 0
    compressed_bits_at_rank = Fraction(0)
    compressed_bits_at_rank1 = Fraction(0)
    rank1 = make_compressor(compressor_name, 1)
    for spec in catalog.params:
        total_scalars += spec.size
        if spec.is_bias:
            compressed_bits_at_rank += BITS_PER_SCALAR * spec.size
            compressed_bits_at_rank1 += BITS_PER_SCALAR * spec.size
            continue
        n, m = spec.matrix_shape
        bits = Fraction(compressor.payload_bits(n, m))
        bits1 = Fraction(rank1.payload_bits(n, m))
        compressed_bits_at_rank += bits
        compressed_bits_at_rank1 += bits1
        dense_bits = Fraction(BITS_PER_SCALAR * spec.size)
        rows.append(RatioRow(
            name=spec.name,
            tensor_shape=spec.shape,
            matrix_shape=(n, m),
            kb=kb_display(spec.size),
            coefficient=round_half_up(dense_bits / bits1),
            ratio_at_rank=dense_bits / bits,
        ))
    bias_scalars = _aggregate_bias_rows(catalog)
    if bias_scalars:
        rows.append(RatioRow(
            name="bias_vectors_total",
            tensor_shape=(bias_scalars,),
            matrix_shape=None,
            kb=kb_display(bias_scalars),
            coefficient=None,
            ratio_at_rank=None,
        ))
    dense_total_bits = Fraction(BITS_PER_SCALAR * total_scalars)
    total_ratio = dense_total_bits / compressed_bits_at_rank
    batches = catalog.batches_per_epoch
    return RatioReport(
        catalog=catalog.name,
        compressor=compressor.name,
        rank=rank,
        rows=rows,
        total_mb=mb_display_bytes(total_scalars * 4),
        total_coefficient_exact=dense_total_bits / compressed_bits_at_rank1,
        total_ratio_at_rank=total_ratio,
        data_per_epoch_mb=mb_display_bytes(
            Fraction(batches) * compressed_bits_at_rank / 8),
        uncompressed_per_epoch_mb=mb_display_bytes(batches * total_scalars * 4),
    )
