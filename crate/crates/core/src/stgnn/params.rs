/// Named flat views over every trainable array, in a fixed order.
///
/// The order of visited blocks is the optimizer-state order, the
/// checkpoint order and the seeded initialisation order, so it must not
/// depend on anything but the model layout.
pub trait ParamBlocks {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a [f64]));
    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut [f64]));

    fn blocks(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        self.visit("", &mut |name, data| out.push((trim(name), data)));
        out
    }

    fn blocks_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::new();
        self.visit_mut("", &mut |name, data| out.push((trim(name), data)));
        out
    }

    fn parameter_count(&self) -> usize {
        self.blocks().iter().map(|(_, b)| b.len()).sum()
    }

    /// First block holding a NaN or infinity.
    fn first_non_finite(&self) -> Option<String> {
        self.blocks()
            .into_iter()
            .find(|(_, b)| b.iter().any(|v| !v.is_finite()))
            .map(|(name, _)| name)
    }
}

fn trim(name: String) -> String {
    name.trim_start_matches('.').to_string()
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    format!("{prefix}.{name}")
}
