use clap::Parser;

fn main() {
    let cli = vampnet_cli::commands::Cli::parse();
    std::process::exit(vampnet_cli::commands::run(cli));
}
