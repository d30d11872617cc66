"""Full dialogue model: shared embedding, reasoning encoder, decoder."""

import numpy as np

from .decoder import Decoder
from .encoder import FeatureBundle, ReasoningEncoder
from .layers import Embedding, ParameterSet
from .tensor import Tensor


class DialogueModel:
    def __init__(self, vocab_size, embed_dim, hidden_dim, i_max, rng):
        if i_max < 1:
            raise ValueError("i_max must be >= 1")
        ps = ParameterSet(rng)
        self.vocab_size = vocab_size
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.i_max = i_max
        self.embedding = Embedding(ps, "embedding", vocab_size, embed_dim)
        self.encoder = ReasoningEncoder(ps, self.embedding, hidden_dim)
        self.decoder = Decoder(ps, self.embedding, hidden_dim, vocab_size)
        self.params = ps.params

    def image_matrix(self, features):
        """(N, H*W) constant feature matrix from a (N, H, W) grid."""
        if features.shape[0] != self.hidden_dim:
            raise ValueError(
                f"feature width {features.shape[0]} != model width {self.hidden_dim}"
            )
        return Tensor(features.reshape(self.hidden_dim, -1))

    def bundle(self, features, caption_ids, history_qa, question_ids):
        """Assemble the encoder inputs for one round."""
        return FeatureBundle(
            image=self.image_matrix(features),
            question=self.encoder.encode_question(question_ids),
            history=self.encoder.encode_history(caption_ids, history_qa),
        )

    def encode_round(self, features, caption_ids, history_qa, question_ids):
        """(embedding, trace) for one dialogue round."""
        b = self.bundle(features, caption_ids, history_qa, question_ids)
        return self.encoder.reason(b, self.i_max)

    def param_shapes(self):
        return {name: t.data.shape for name, t in self.params.items()}

    def load_param_arrays(self, arrays):
        for name, tensor in self.params.items():
            arr = np.asarray(arrays[name], dtype=np.float64).reshape(tensor.data.shape)
            tensor.data = arr
