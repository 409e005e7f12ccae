//! Pinned scenarios behind `rhc reproduce`.

use std::path::Path;

use crate::scenario::{ConfigError, LoadedScenario, Overrides};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Target {
    Fig1,
    Fig2,
    Fig3,
    Example1,
}

impl Target {
    pub fn name(self) -> &'static str {
        match self {
            Self::Fig1 => "fig1",
            Self::Fig2 => "fig2",
            Self::Fig3 => "fig3",
            Self::Example1 => "example1",
        }
    }

    /// `(file name, contents)` of each scenario the target runs.
    pub fn sources(self) -> &'static [(&'static str, &'static str)] {
        match self {
            Self::Fig1 => &[("cubic_zero_terminal.toml", include_str!("../scenarios/cubic_zero_terminal.toml"))],
            Self::Fig2 => &[("cubic_quadratic_terminal.toml", include_str!("../scenarios/cubic_quadratic_terminal.toml"))],
            Self::Fig3 => &[
                ("cubic_negated_storage.toml", include_str!("../scenarios/cubic_negated_storage.toml")),
                ("cubic_negated_storage_x2.toml", include_str!("../scenarios/cubic_negated_storage_x2.toml")),
            ],
            Self::Example1 => &[
                ("lq_zero_terminal.toml", include_str!("../scenarios/lq_zero_terminal.toml")),
                ("lq_quadratic_terminal.toml", include_str!("../scenarios/lq_quadratic_terminal.toml")),
            ],
        }
    }

    /// Loads the target's scenarios. Each writes into `<root>/<scenario name>`,
    /// with `root` defaulting to `out/<target>`.
    pub fn scenarios(self, overrides: &Overrides) -> Result<Vec<LoadedScenario>, ConfigError> {
        let root = overrides
            .out
            .clone()
            .unwrap_or_else(|| Path::new("out").join(self.name()));
        self.sources()
            .iter()
            .map(|(file, src)| {
                let mut sc = LoadedScenario::from_str(src, file)?;
                let o = Overrides {
                    out: Some(root.join(&sc.scenario.name)),
                    ..overrides.clone()
                };
                sc.apply(&o)?;
                Ok(sc)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::ValueEnum;

    #[test]
    fn pinned_scenarios_parse() {
        for t in Target::value_variants() {
            let scs = t.scenarios(&Overrides::default()).unwrap();
            assert_eq!(scs.len(), t.sources().len());
            for sc in scs {
                assert!(sc.out_dir().starts_with(Path::new("out").join(t.name())));
                sc.setup().unwrap();
            }
        }
    }

    #[test]
    fn out_override_is_the_root() {
        let o = Overrides {
            out: Some("/tmp/x".into()),
            ..Overrides::default()
        };
        let scs = Target::Fig3.scenarios(&o).unwrap();
        assert_eq!(scs[0].out_dir(), Path::new("/tmp/x/cubic_negated_storage"));
        assert_eq!(scs[1].out_dir(), Path::new("/tmp/x/cubic_negated_storage_x2"));
    }
}
