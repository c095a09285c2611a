use super::{Activation, DenseNetwork};
use crate::error::{ensure, Result};
use rand::Rng;

/// A network partitioned at the cut layer: `w = [wc; ws]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitModel {
    pub client: DenseNetwork,
    pub server: DenseNetwork,
}

impl SplitModel {
    pub fn new(client: DenseNetwork, server: DenseNetwork) -> Result<Self> {
        ensure!(
            client.output_dim() == server.input_dim(),
            Shape,
            "client outputs {} values but server expects {}",
            client.output_dim(),
            server.input_dim()
        );
        ensure!(
            server.has_softmax_head(),
            Shape,
            "server network must end in a softmax-crossentropy head"
        );
        Ok(Self { client, server })
    }

    /// Builds a split MLP: `client_sizes` runs from the input width to the cut
    /// width `d`, `server_sizes` from `d` to the number of classes.
    pub fn mlp<R: Rng + ?Sized>(
        client_sizes: &[usize],
        server_sizes: &[usize],
        hidden: Activation,
        cut: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        ensure!(
            client_sizes.len() >= 2 && server_sizes.len() >= 2,
            Shape,
            "each half needs at least one layer"
        );
        ensure!(
            client_sizes.last() == server_sizes.first(),
            Shape,
            "cut widths disagree: {:?} vs {:?}",
            client_sizes.last(),
            server_sizes.first()
        );
        let mut client_acts = vec![hidden; client_sizes.len() - 1];
        *client_acts.last_mut().unwrap() = cut;
        let mut server_acts = vec![hidden; server_sizes.len() - 1];
        *server_acts.last_mut().unwrap() = Activation::SoftmaxCrossEntropy;
        let client = DenseNetwork::glorot(client_sizes, &client_acts, rng)?;
        let server = DenseNetwork::glorot(server_sizes, &server_acts, rng)?;
        Self::new(client, server)
    }

    pub fn cut_dim(&self) -> usize {
        self.client.output_dim()
    }

    /// The unsplit network `h(ws; u(wc; x))`.
    pub fn merged(&self) -> DenseNetwork {
        self.client
            .concat(&self.server)
            .expect("split halves always chain")
    }

    pub fn parameter_count(&self) -> usize {
        self.client.parameter_count() + self.server.parameter_count()
    }
}
