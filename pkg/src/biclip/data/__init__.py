"""Dataset ingestion, BTSR tensor files, synthetic data and subsampling."""

from biclip.data.btsr import decode_tensor, encode_tensor, read_tensor_file, write_tensor_file
from biclip.data.dataset import Dataset, Sample, load_dataset, save_dataset, subsample
from biclip.data.synthetic import generate_synthetic

__all__ = [
    "Dataset",
    "Sample",
    "decode_tensor",
    "encode_tensor",
    "generate_synthetic",
    "load_dataset",
    "read_tensor_file",
    "save_dataset",
    "subsample",
    "write_tensor_file",
]
