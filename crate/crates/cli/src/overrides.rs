use clap::{Arg, ArgMatches, Args, Command, FromArgMatches};

use brl_core::train::TrainConfig;

/// One `--section.key VALUE` flag per config key.
#[derive(Debug, Clone, Default)]
pub struct ConfigOverrides {
    pub values: Vec<(String, String)>,
}

fn alias(key: &str) -> Option<&'static str> {
    match key {
        "schedule.epochs" => Some("epochs"),
        "train.seed" => Some("seed"),
        "train.threads" => Some("threads"),
        "train.out" => Some("out"),
        _ => None,
    }
}

impl FromArgMatches for ConfigOverrides {
    fn from_arg_matches(matches: &ArgMatches) -> Result<Self, clap::Error> {
        let mut o = Self::default();
        o.update_from_arg_matches(matches)?;
        Ok(o)
    }

    fn update_from_arg_matches(&mut self, matches: &ArgMatches) -> Result<(), clap::Error> {
        for k in TrainConfig::keys() {
            if let Some(v) = matches.get_one::<String>(k.key) {
                self.values.retain(|(key, _)| key != k.key);
                self.values.push((k.key.to_string(), v.clone()));
            }
        }
        Ok(())
    }
}

impl Args for ConfigOverrides {
    fn augment_args(mut cmd: Command) -> Command {
        let defaults = TrainConfig::default();
        for k in TrainConfig::keys() {
            let default = defaults.get(k.key).unwrap_or_default();
            let shown = if default.is_empty() { "none".to_string() } else { default };
            let mut arg = Arg::new(k.key)
                .long(k.key)
                .value_name("VALUE")
                .help(format!("{} [default: {shown}]", k.help));
            if let Some(a) = alias(k.key) {
                arg = arg.visible_alias(a);
            }
            cmd = cmd.arg(arg);
        }
        cmd
    }

    fn augment_args_for_update(cmd: Command) -> Command {
        Self::augment_args(cmd)
    }
}
