"""QNN (quanvolution + dense head), QCNN and VQC classifiers."""

from .amplitude import QCNN, VQC, AmplitudeClassifier, binary_logits, qcnn_circuit, qcnn_forward, vqc_circuit, vqc_forward
from .circuit import Op, ParamCircuit
from .qnn import QuanvolutionClassifier, qnn_head_forward, quanv_forward
from .spec import ModelSpec, ParamSet

__all__ = [
    "AmplitudeClassifier",
    "ModelSpec",
    "Op",
    "ParamCircuit",
    "ParamSet",
    "QCNN",
    "QuanvolutionClassifier",
    "VQC",
    "binary_logits",
    "build_model",
    "qcnn_circuit",
    "qcnn_forward",
    "qnn_head_forward",
    "quanv_forward",
    "vqc_circuit",
    "vqc_forward",
]


def build_model(spec: ModelSpec):
    if spec.kind == "qnn":
        return QuanvolutionClassifier(spec)
    if spec.kind == "qcnn":
        return QCNN(spec)
    return VQC(spec)
