//! Item embeddings from click phrases: Huffman coding, the
//! hierarchical-softmax objective, the skip-gram trainer, and similarity
//! queries over the resulting table.

mod hs;
mod huffman;
mod table;
mod train;

pub use hs::{hs_loss_and_gradient, HsGradient};
pub use huffman::{build_huffman_tree, huffman_from_weights, HuffmanCoding};
pub use table::{
    cosine_similarity, nearest_neighbors, read_embeddings_binary, read_embeddings_text,
    write_embeddings_binary, write_embeddings_text, EmbeddingTable,
};
pub use train::{mean_corpus_loss, train_skipgram, train_skipgram_logged, EmbedConfig, EpochLosses};
