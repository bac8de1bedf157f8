use crate::error::{Error, Result};

/// Shape of the retriever transformer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrieverConfig {
    /// Width of the input image embeddings.
    pub d_in: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_encoder: usize,
    pub n_decoder: usize,
    pub d_ff: usize,
    pub max_support: usize,
    pub max_query: usize,
    /// Standard deviation of the normal weight initialization.
    pub init_std: f64,
    /// Add an identity component to the input projection and the encoder
    /// query/key maps at initialization, so that attention starts out
    /// tracking embedding similarity.
    pub identity_init: bool,
}

impl Default for RetrieverConfig {
    fn default() -> Self {
        RetrieverConfig {
            d_in: 32,
            d_model: 32,
            n_heads: 2,
            n_encoder: 2,
            n_decoder: 1,
            d_ff: 64,
            max_support: 1000,
            max_query: 100,
            init_std: 0.02,
            identity_init: true,
        }
    }
}

impl RetrieverConfig {
    /// The large configuration: width 256, 8 heads, 8 encoder and 4 decoder
    /// blocks, feed-forward width 2048.
    pub fn large(d_in: usize) -> Self {
        RetrieverConfig {
            d_in,
            d_model: 256,
            n_heads: 8,
            n_encoder: 8,
            n_decoder: 4,
            d_ff: 2048,
            ..RetrieverConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [self.d_in, self.d_model, self.n_heads, self.d_ff, self.max_support, self.max_query];
        if sizes.contains(&0) {
            return Err(Error::invalid("retriever sizes must be positive"));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::invalid(alloc::format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model,
                self.n_heads
            )));
        }
        if !(self.init_std >= 0.0 && self.init_std.is_finite()) {
            return Err(Error::invalid("init_std must be finite and >= 0"));
        }
        Ok(())
    }

    /// Longest token sequence the encoder accepts.
    pub fn capacity(&self) -> usize {
        self.max_support + self.max_query + 1
    }
}
